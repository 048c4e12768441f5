//! Recorded interactions: channels, labels and the on-disk record format.
//!
//! A record file is a CSV with header `t,fx,fy,fz,tx,ty,tz,dpx,dpy,dpz,rx,ry,rz`
//! (SI units, base frame) plus a sidecar JSON holding
//! `{id, action_kind, sample_rate_hz, class_id, class_name}`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_CHANNELS: usize = 9;

pub const CSV_HEADER: [&str; 13] = [
    "t", "fx", "fy", "fz", "tx", "ty", "tz", "dpx", "dpy", "dpz", "rx", "ry", "rz",
];

/// Model input channels, in their fixed storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Fx,
    Fy,
    Fz,
    Tx,
    Ty,
    Tz,
    Dpx,
    Dpy,
    Dpz,
}

/// Physical unit group of a channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitGroup {
    Force,
    Torque,
    Position,
}

impl Channel {
    pub const ALL: [Channel; NUM_CHANNELS] = [
        Channel::Fx,
        Channel::Fy,
        Channel::Fz,
        Channel::Tx,
        Channel::Ty,
        Channel::Tz,
        Channel::Dpx,
        Channel::Dpy,
        Channel::Dpz,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Channel> {
        Channel::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        CSV_HEADER[self.index() + 1]
    }

    pub fn unit_group(self) -> UnitGroup {
        match self.index() {
            0..=2 => UnitGroup::Force,
            3..=5 => UnitGroup::Torque,
            _ => UnitGroup::Position,
        }
    }

    /// Force and torque channels carry enough variance to be worth a scaleogram.
    pub fn is_wrench(self) -> bool {
        self.index() < 6
    }
}

pub const FORCE_CHANNELS: [usize; 3] = [0, 1, 2];
pub const TORQUE_CHANNELS: [usize; 3] = [3, 4, 5];
pub const POSITION_CHANNELS: [usize; 3] = [6, 7, 8];
pub const WRENCH_CHANNELS: [usize; 6] = [0, 1, 2, 3, 4, 5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Button,
    Switch,
    Knob,
    Flap,
    Ldg,
    SBrake,
}

impl ActionKind {
    pub const ALL: [ActionKind; 6] = [
        ActionKind::Button,
        ActionKind::Switch,
        ActionKind::Knob,
        ActionKind::Flap,
        ActionKind::Ldg,
        ActionKind::SBrake,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Button => "button",
            ActionKind::Switch => "switch",
            ActionKind::Knob => "knob",
            ActionKind::Flap => "flap",
            ActionKind::Ldg => "ldg",
            ActionKind::SBrake => "sbrake",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace(['-', '_'], "");
        ActionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == lower)
            .ok_or_else(|| Error::Config(format!("unknown action kind '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    pub class_id: u32,
    pub class_name: String,
}

impl Label {
    pub fn new(class_id: u32, class_name: impl Into<String>) -> Result<Self> {
        let class_name = class_name.into();
        if class_name.is_empty() {
            return Err(Error::InvalidDataset("empty class name".into()));
        }
        Ok(Label {
            class_id,
            class_name,
        })
    }
}

/// One augmentation step. Only label-preserving operations are representable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentOp {
    Dilate { ratio: f64 },
    Translate { shift: i64 },
    Noise { std_fraction: f64, seed: u64 },
}

/// Marks a synthesized record and how it was derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub ops: Vec<AugmentOp>,
}

/// One recorded interaction: 9 synchronized channels plus the TCP rotation vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionRecord {
    pub id: String,
    pub action_kind: ActionKind,
    pub sample_rate_hz: f64,
    /// `[9, N]` in [`Channel`] order, base frame.
    pub channels: Tensor<f64>,
    /// `[3, N]` rotation vectors `[rx, ry, rz]` in radians.
    pub tcp_rotvec: Tensor<f64>,
    pub label: Label,
    /// Set on augmented copies; such records must stay in the training split.
    pub augmented: Option<Provenance>,
}

/// Sidecar metadata stored next to each record CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub action_kind: ActionKind,
    pub sample_rate_hz: f64,
    pub class_id: u32,
    pub class_name: String,
}

impl ActionRecord {
    pub fn new(
        id: impl Into<String>,
        action_kind: ActionKind,
        sample_rate_hz: f64,
        channels: Tensor<f64>,
        tcp_rotvec: Tensor<f64>,
        label: Label,
    ) -> Result<Self> {
        let rec = ActionRecord {
            id: id.into(),
            action_kind,
            sample_rate_hz,
            channels,
            tcp_rotvec,
            label,
            augmented: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Builds a record from absolute TCP positions; the position channels become
    /// deltas from the first sample.
    pub fn from_absolute_positions(
        id: impl Into<String>,
        action_kind: ActionKind,
        sample_rate_hz: f64,
        wrench: &Tensor<f64>,
        positions: &Tensor<f64>,
        tcp_rotvec: Tensor<f64>,
        label: Label,
    ) -> Result<Self> {
        if wrench.ndim() != 2 || wrench.rows() != 6 || positions.shape() != [3, wrench.cols()] {
            return Err(Error::Shape("expected wrench [6, N] and positions [3, N]".into()));
        }
        let mut rows: Vec<Vec<f64>> = (0..6).map(|r| wrench.row(r).to_vec()).collect();
        for r in 0..3 {
            let p = positions.row(r);
            rows.push(p.iter().map(|v| v - p[0]).collect());
        }
        Self::new(
            id,
            action_kind,
            sample_rate_hz,
            Tensor::from_rows(&rows)?,
            tcp_rotvec,
            label,
        )
    }

    pub fn len(&self) -> usize {
        self.channels.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented.is_some()
    }

    pub fn channel(&self, c: Channel) -> &[f64] {
        self.channels.row(c.index())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(bad(format!("sample rate {} must be > 0", self.sample_rate_hz)));
        }
        if self.channels.ndim() != 2 || self.channels.rows() != NUM_CHANNELS {
            return Err(bad(format!(
                "channels must be [9, N], got {:?}",
                self.channels.shape()
            )));
        }
        let n = self.channels.cols();
        if n == 0 {
            return Err(bad("record has no samples".into()));
        }
        if self.tcp_rotvec.shape() != [3, n] {
            return Err(bad(format!(
                "rotation vectors must be [3, {n}], got {:?}",
                self.tcp_rotvec.shape()
            )));
        }
        if self.label.class_name.is_empty() {
            return Err(bad("empty class name".into()));
        }
        Ok(())
    }

    pub fn meta(&self) -> RecordMeta {
        RecordMeta {
            id: self.id.clone(),
            action_kind: self.action_kind,
            sample_rate_hz: self.sample_rate_hz,
            class_id: self.label.class_id,
            class_name: self.label.class_name.clone(),
        }
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`, returning the CSV path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let meta_path = dir.join(format!("{stem}.json"));
        self.write_csv(&csv_path)?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
        Ok(csv_path)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.len() * 160);
        out.push_str(&CSV_HEADER.join(","));
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!("{}", i as f64 / self.sample_rate_hz));
            for c in 0..NUM_CHANNELS {
                out.push_str(&format!(",{}", self.channels.at2(c, i)));
            }
            for c in 0..3 {
                out.push_str(&format!(",{}", self.tcp_rotvec.at2(c, i)));
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads a record CSV and its sidecar (same stem, `.json` extension).
    pub fn load(csv_path: &Path) -> Result<Self> {
        let meta_path = csv_path.with_extension("json");
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: RecordMeta =
            serde_json::from_str(&meta_text).map_err(|e| Error::parse(&meta_path, e))?;
        Self::load_with_meta(csv_path, meta)
    }

    pub fn load_with_meta(csv_path: &Path, meta: RecordMeta) -> Result<Self> {
        let (channels, rotvec) = read_record_csv(csv_path)?;
        Self::new(
            meta.id,
            meta.action_kind,
            meta.sample_rate_hz,
            channels,
            rotvec,
            Label::new(meta.class_id, meta.class_name)?,
        )
    }
}

/// Reads the 13-column record CSV into `([9, N], [3, N])` tensors.
pub fn read_record_csv(path: &Path) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let headers = reader.headers().map_err(|e| Error::parse(path, e))?.clone();
    let names: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names != CSV_HEADER {
        return Err(Error::parse(
            path,
            format!("expected header {}, got {}", CSV_HEADER.join(","), names.join(",")),
        ));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 12];
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::parse(path, e))?;
        for (c, col) in cols.iter_mut().enumerate() {
            let field = row.get(c + 1).unwrap_or("");
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(path, format!("row {}: bad number '{field}'", line + 2)))?;
            if !v.is_finite() {
                return Err(Error::parse(path, format!("row {}: non-finite value", line + 2)));
            }
            col.push(v);
        }
    }
    if cols[0].is_empty() {
        return Err(Error::parse(path, "record has no samples"));
    }
    let rotvec = Tensor::from_rows(&cols[9..])?;
    cols.truncate(9);
    Ok((Tensor::from_rows(&cols)?, rotvec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> ActionRecord {
        let ch = Tensor::from_vec(&[9, n], (0..9 * n).map(|i| i as f64 * 0.25).collect()).unwrap();
        let rv = Tensor::from_vec(&[3, n], (0..3 * n).map(|i| i as f64 * 1e-3).collect()).unwrap();
        ActionRecord::new("r0", ActionKind::Knob, 500.0, ch, rv, Label::new(1, "Fail").unwrap())
            .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let rec = toy(17);
        let path = rec.save(dir.path(), "r0").unwrap();
        let back = ActionRecord::load(&path).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn rejects_mismatched_rotvec_and_bad_rate() {
        let ch = Tensor::zeros(&[9, 4]);
        let rv = Tensor::zeros(&[3, 5]);
        let label = Label::new(0, "Success").unwrap();
        assert!(ActionRecord::new("x", ActionKind::Button, 500.0, ch.clone(), rv, label.clone()).is_err());
        assert!(ActionRecord::new("x", ActionKind::Button, 0.0, ch, Tensor::zeros(&[3, 4]), label).is_err());
        assert!(Label::new(0, "").is_err());
    }

    #[test]
    fn position_deltas_reference_first_sample() {
        let wrench = Tensor::zeros(&[6, 3]);
        let pos = Tensor::from_rows(&[vec![1.0, 1.5, 2.0], vec![0.0; 3], vec![-1.0, -1.0, -0.5]]).unwrap();
        let rec = ActionRecord::from_absolute_positions(
            "p",
            ActionKind::Flap,
            500.0,
            &wrench,
            &pos,
            Tensor::zeros(&[3, 3]),
            Label::new(0, "Success").unwrap(),
        )
        .unwrap();
        assert_eq!(rec.channel(Channel::Dpx), &[0.0, 0.5, 1.0]);
        assert_eq!(rec.channel(Channel::Dpz), &[0.0, 0.0, 0.5]);
    }

    #[test]
    fn csv_with_nan_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, format!("{}\n0,1,2,3,4,5,NaN,7,8,9,0,0,0\n", CSV_HEADER.join(","))).unwrap();
        assert!(read_record_csv(&p).is_err());
    }

    #[test]
    fn action_kind_parsing() {
        assert_eq!("S-Brake".parse::<ActionKind>().unwrap(), ActionKind::SBrake);
        assert_eq!("LDG".parse::<ActionKind>().unwrap(), ActionKind::Ldg);
        assert!("lever".parse::<ActionKind>().is_err());
        assert_eq!(serde_json::to_string(&ActionKind::SBrake).unwrap(), "\"sbrake\"");
    }
}
