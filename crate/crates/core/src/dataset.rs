//! Per-action datasets, JSON manifests and stratified splitting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{ActionKind, ActionRecord};

pub type ClassMap = BTreeMap<u32, String>;

/// Records of a single action kind with a consistent class map.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<ActionRecord>,
    class_map: ClassMap,
    action_kind: ActionKind,
}

/// On-disk dataset description. Record paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub action_kind: ActionKind,
    pub class_map: ClassMap,
    pub records: Vec<PathBuf>,
}

impl Dataset {
    pub fn new(action_kind: ActionKind, class_map: ClassMap, records: Vec<ActionRecord>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (id, name) in &class_map {
            if name.is_empty() {
                return Err(Error::InvalidDataset(format!("class {id} has an empty name")));
            }
            if let Some(other) = seen.insert(name.clone(), *id) {
                return Err(Error::InvalidDataset(format!(
                    "class name '{name}' used by ids {other} and {id}"
                )));
            }
        }
        for r in &records {
            if r.action_kind != action_kind {
                return Err(Error::InvalidDataset(format!(
                    "record {} is a {} action in a {} dataset",
                    r.id, r.action_kind, action_kind
                )));
            }
            match class_map.get(&r.label.class_id) {
                Some(name) if *name == r.label.class_name => {}
                Some(name) => {
                    return Err(Error::InvalidDataset(format!(
                        "record {} labels class {} as '{}', class map says '{name}'",
                        r.id, r.label.class_id, r.label.class_name
                    )))
                }
                None => {
                    return Err(Error::InvalidDataset(format!(
                        "record {} has class id {} missing from the class map",
                        r.id, r.label.class_id
                    )))
                }
            }
        }
        Ok(Dataset {
            records,
            class_map,
            action_kind,
        })
    }

    pub fn records(&self) -> &[ActionRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ActionRecord> {
        self.records
    }

    pub fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    pub fn action_kind(&self) -> ActionKind {
        self.action_kind
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_map.len()
    }

    /// Dense output index of a class id (its rank among the class map keys).
    pub fn class_index(&self, class_id: u32) -> Option<usize> {
        class_index(&self.class_map, class_id)
    }

    /// Record count per class id, including classes with zero records.
    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts: BTreeMap<u32, usize> = self.class_map.keys().map(|&k| (k, 0)).collect();
        for r in &self.records {
            *counts.entry(r.label.class_id).or_default() += 1;
        }
        counts
    }

    /// Same class map and kind, different records.
    pub fn with_records(&self, records: Vec<ActionRecord>) -> Result<Self> {
        Dataset::new(self.action_kind, self.class_map.clone(), records)
    }

    pub fn load_manifest(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let records = manifest
            .records
            .iter()
            .map(|p| ActionRecord::load(&base.join(p)))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(manifest.action_kind, manifest.class_map, records)
    }

    /// Writes every record plus `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let stem = sanitize(&r.id);
            r.save(dir, &stem)?;
            paths.push(PathBuf::from(format!("{stem}.csv")));
        }
        let manifest = Manifest {
            action_kind: self.action_kind,
            class_map: self.class_map.clone(),
            records: paths,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn class_index(class_map: &ClassMap, class_id: u32) -> Option<usize> {
    class_map.keys().position(|&k| k == class_id)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Split sizes for one class: floor allocation, then remainders by largest
/// fractional part. Every size is within one record of its exact share.
fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    for i in 0..3 {
        sizes[i] = exact[i].floor() as usize;
    }
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            sizes[i] += 1;
            rest -= 1;
        }
    }
    sizes
}

/// Stratified, seeded train/validation/test partition.
///
/// Augmented records always land in the training split.
pub fn split_dataset(d: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|v| !v.is_finite() || *v < 0.0) || f[0] <= 0.0 || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(f[0], f[1], f[2]));
    }
    let needed = f.iter().filter(|v| **v > 0.0).count();

    let mut by_class: BTreeMap<u32, Vec<usize>> = d.class_map.keys().map(|&k| (k, Vec::new())).collect();
    let mut augmented = Vec::new();
    for (i, r) in d.records.iter().enumerate() {
        if r.is_augmented() {
            augmented.push(i);
        } else {
            by_class.entry(r.label.class_id).or_default().push(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (class_id, mut idx) in by_class {
        if idx.len() < needed {
            return Err(Error::ClassTooSmall {
                class_id,
                class_name: d.class_map[&class_id].clone(),
                count: idx.len(),
                needed,
            });
        }
        idx.shuffle(&mut rng);
        let sizes = allocate(idx.len(), f);
        let mut it = idx.into_iter();
        for (part, &size) in parts.iter_mut().zip(&sizes) {
            part.extend(it.by_ref().take(size));
        }
    }
    parts[0].extend(augmented);

    let pick = |idx: &[usize]| -> Result<Dataset> {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        d.with_records(idx.iter().map(|&i| d.records[i].clone()).collect())
    };
    Ok((pick(&parts[0])?, pick(&parts[1])?, pick(&parts[2])?))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::record::{Label, Provenance};
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    pub(crate) fn dataset(per_class: &[usize]) -> Dataset {
        let mut class_map = ClassMap::new();
        let mut records = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            let name = format!("class{c}");
            class_map.insert(c as u32, name.clone());
            for i in 0..n {
                records.push(
                    ActionRecord::new(
                        format!("c{c}_{i}"),
                        ActionKind::Button,
                        500.0,
                        Tensor::filled(&[9, 4], i as f64),
                        Tensor::zeros(&[3, 4]),
                        Label::new(c as u32, name.clone()).unwrap(),
                    )
                    .unwrap(),
                );
            }
        }
        Dataset::new(ActionKind::Button, class_map, records).unwrap()
    }

    fn ids(d: &Dataset) -> Vec<String> {
        d.records().iter().map(|r| r.id.clone()).collect()
    }

    #[test]
    fn sixty_twenty_twenty_on_ten_records() {
        let d = dataset(&[5, 5]);
        let (tr, va, te) = split_dataset(&d, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (6, 2, 2));
        for part in [&tr, &va, &te] {
            let counts = part.class_counts();
            assert_eq!(counts[&0], counts[&1]);
        }
    }

    #[test]
    fn seventy_thirty_without_validation() {
        let d = dataset(&[50, 50]);
        let (tr, va, te) = split_dataset(&d, (0.7, 0.0, 0.3), 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (70, 0, 30));
    }

    #[test]
    fn deterministic_for_seed() {
        let d = dataset(&[9, 13, 4]);
        let a = split_dataset(&d, (0.6, 0.2, 0.2), 42).unwrap();
        let b = split_dataset(&d, (0.6, 0.2, 0.2), 42).unwrap();
        assert_eq!(ids(&a.0), ids(&b.0));
        assert_eq!(ids(&a.1), ids(&b.1));
        assert_eq!(ids(&a.2), ids(&b.2));
    }

    #[test]
    fn errors_name_the_small_class_and_bad_fractions() {
        let d = dataset(&[5, 2]);
        match split_dataset(&d, (0.6, 0.2, 0.2), 0) {
            Err(Error::ClassTooSmall { class_name, .. }) => assert_eq!(class_name, "class1"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            split_dataset(&d, (0.6, 0.2, 0.3), 0),
            Err(Error::BadFractions(..))
        ));
    }

    #[test]
    fn augmented_records_stay_in_training() {
        let d = dataset(&[6, 6]);
        let mut records = d.records().to_vec();
        for r in records.iter_mut().step_by(3) {
            r.augmented = Some(Provenance {
                source_id: "x".into(),
                ops: vec![],
            });
        }
        let d = d.with_records(records).unwrap();
        let (tr, va, te) = split_dataset(&d, (0.5, 0.25, 0.25), 3).unwrap();
        assert!(va.records().iter().chain(te.records()).all(|r| !r.is_augmented()));
        assert_eq!(tr.records().iter().filter(|r| r.is_augmented()).count(), 4);
        assert_eq!(tr.len() + va.len() + te.len(), 12);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = dataset(&[2, 3]);
        let path = d.save(dir.path()).unwrap();
        let back = Dataset::load_manifest(&path).unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn split_is_an_exact_stratified_partition(
            counts in proptest::collection::vec(3usize..40, 1..5),
            seed in any::<u64>(),
            a in 0.2f64..0.8,
            b in 0.05f64..0.5,
        ) {
            let b = b.min(0.95 - a);
            let fr = (a, b, 1.0 - a - b);
            let d = dataset(&counts);
            let (tr, va, te) = split_dataset(&d, fr, seed).unwrap();
            let mut all: Vec<String> = ids(&tr).into_iter().chain(ids(&va)).chain(ids(&te)).collect();
            all.sort();
            let mut orig = ids(&d);
            orig.sort();
            prop_assert_eq!(all, orig);
            for (c, &n) in counts.iter().enumerate() {
                let c = c as u32;
                for (part, frac) in [(&tr, fr.0), (&va, fr.1), (&te, fr.2)] {
                    let got = part.class_counts()[&c] as f64;
                    prop_assert!((got - frac * n as f64).abs() <= 1.0 + 1e-9,
                        "class {} got {} want {}", c, got, frac * n as f64);
                }
            }
        }
    }
}
