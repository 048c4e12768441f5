//! The full conditioning recipe applied to one record.

use serde::{Deserialize, Serialize};

use super::filter::lowpass_filter;
use super::normalize::{apply_normalizer, fit_normalizer, NormStats, Normalization};
use super::rotation::record_to_tcp;
use super::transient::{
    extract_window, select_onset, short_time_energy, threshold_indices, CrossingIndices, OnsetRule, Thresholds,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::record::{ActionRecord, Channel, FORCE_CHANNELS, NUM_CHANNELS};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cutoff_hz: f64,
    pub filter_order: usize,
    pub energy_window: usize,
    pub thresholds: Thresholds,
    pub proximity: usize,
    pub far_gap: usize,
    pub extract_len: usize,
    pub normalization: Normalization,
    /// Output channel subset, in output order. `None` keeps all nine.
    pub selected_channels: Option<Vec<usize>>,
    pub transform_to_tcp: bool,
    /// Channels summed into the short-time energy.
    pub energy_channels: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cutoff_hz: 30.0,
            filter_order: 4,
            energy_window: 300,
            thresholds: Thresholds::default(),
            proximity: 60,
            far_gap: 200,
            extract_len: 800,
            normalization: Normalization::None,
            selected_channels: None,
            transform_to_tcp: true,
            energy_channels: FORCE_CHANNELS.to_vec(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.extract_len == 0 || self.energy_window == 0 {
            return Err(Error::Config("extract_len and energy_window must be positive".into()));
        }
        if self.filter_order == 0 || self.filter_order % 2 != 0 {
            return Err(Error::Config(format!("filter_order must be even and positive, got {}", self.filter_order)));
        }
        if !(self.cutoff_hz > 0.0) {
            return Err(Error::Config("cutoff_hz must be positive".into()));
        }
        if self.energy_channels.is_empty() || self.energy_channels.iter().any(|&c| c >= NUM_CHANNELS) {
            return Err(Error::Config("energy_channels must be a non-empty subset of 0..9".into()));
        }
        if let Some(sel) = &self.selected_channels {
            if sel.is_empty() || sel.iter().any(|&c| c >= NUM_CHANNELS) {
                return Err(Error::Config("selected_channels must be a non-empty subset of 0..9".into()));
            }
        }
        Ok(())
    }

    /// Channels present in the pipeline output, in order.
    pub fn output_channels(&self) -> Vec<Channel> {
        match &self.selected_channels {
            Some(sel) => sel.iter().map(|&c| Channel::ALL[c]).collect(),
            None => Channel::ALL.to_vec(),
        }
    }
}

/// Intermediate results of transient isolation for one record.
#[derive(Clone, Debug, PartialEq)]
pub struct Isolated {
    /// `[C_sel, extract_len]`, filtered but not normalized.
    pub window: Tensor<f64>,
    pub onset: usize,
    pub crossings: CrossingIndices,
    pub rule: OnsetRule,
}

/// Frame transform, low-pass, transient detection, windowing and channel selection.
pub fn isolate_transient(rec: &ActionRecord, cfg: &PipelineConfig) -> Result<Isolated> {
    cfg.validate()?;
    let channels = if cfg.transform_to_tcp {
        record_to_tcp(rec)?
    } else {
        rec.channels.clone()
    };
    let filtered = lowpass_filter(&channels, cfg.cutoff_hz, cfg.filter_order, rec.sample_rate_hz)?;
    let window = cfg.energy_window.min(filtered.cols());
    let energy = short_time_energy(&filtered, window, &cfg.energy_channels)?;
    let crossings = threshold_indices(&energy, cfg.thresholds).map_err(|e| match e {
        Error::NoTransient { .. } => Error::NoTransient {
            record: Some(rec.id.clone()),
        },
        other => other,
    })?;
    let (onset, rule) = select_onset(crossings, cfg.proximity, cfg.far_gap);
    let mut window = extract_window(&filtered, onset, cfg.extract_len)?;
    if let Some(sel) = &cfg.selected_channels {
        window = window.select_rows(sel)?;
    }
    Ok(Isolated {
        window,
        onset,
        crossings,
        rule,
    })
}

/// Full preprocessing of one record into a `[C_sel, extract_len]` model input.
pub fn run_pipeline(rec: &ActionRecord, cfg: &PipelineConfig, stats: Option<&NormStats>) -> Result<Tensor<f64>> {
    run_pipeline_detailed(rec, cfg, stats).map(|iso| iso.window)
}

/// Like [`run_pipeline`] but keeps the onset bookkeeping.
pub fn run_pipeline_detailed(rec: &ActionRecord, cfg: &PipelineConfig, stats: Option<&NormStats>) -> Result<Isolated> {
    let mut iso = isolate_transient(rec, cfg)?;
    match (cfg.normalization, stats) {
        (Normalization::None, _) => {}
        (_, None) => {
            return Err(Error::Config(format!(
                "normalization {:?} requires fitted statistics",
                cfg.normalization
            )))
        }
        (mode, Some(st)) => {
            if st.mode != mode {
                return Err(Error::Config(format!("statistics fitted for {:?}, config asks {mode:?}", st.mode)));
            }
            iso.window = apply_normalizer(&iso.window, st)?;
        }
    }
    Ok(iso)
}

/// Fits normalization statistics on the un-normalized windows of a training split.
pub fn fit_pipeline_normalizer(train: &Dataset, cfg: &PipelineConfig) -> Result<Option<NormStats>> {
    if cfg.normalization == Normalization::None {
        return Ok(None);
    }
    let windows = train
        .records()
        .iter()
        .map(|r| isolate_transient(r, cfg).map(|iso| iso.window))
        .collect::<Result<Vec<_>>>()?;
    fit_normalizer(&windows, cfg.normalization).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{ActionKind, Label};

    /// Press along base z starting at `onset`, 500 samples long.
    fn press(n: usize, onset: usize) -> ActionRecord {
        let mut ch = Tensor::zeros(&[9, n]);
        for i in onset..(onset + 500).min(n) {
            let k = (i - onset) as f64;
            let f = 10.0 * (k / 20.0).min(1.0);
            ch.set2(2, i, f);
            ch.set2(8, i, -1e-3 * (k / 500.0));
        }
        ActionRecord::new(
            "press",
            ActionKind::Button,
            500.0,
            ch,
            Tensor::zeros(&[3, n]),
            Label::new(0, "Success").unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_force_record_has_no_transient() {
        let rec = ActionRecord::new(
            "idle",
            ActionKind::Button,
            500.0,
            Tensor::zeros(&[9, 2000]),
            Tensor::zeros(&[3, 2000]),
            Label::new(0, "Success").unwrap(),
        )
        .unwrap();
        match run_pipeline(&rec, &PipelineConfig::default(), None) {
            Err(Error::NoTransient { record }) => assert_eq!(record.as_deref(), Some("idle")),
            other => panic!("expected no transient, got {other:?}"),
        }
    }

    #[test]
    fn onset_lands_near_press_and_is_deterministic() {
        let rec = press(3000, 1100);
        let cfg = PipelineConfig::default();
        let a = run_pipeline_detailed(&rec, &cfg, None).unwrap();
        assert!((1040..=1160).contains(&a.onset), "onset {}", a.onset);
        assert_eq!(a.window.shape(), &[9, 800]);
        let b = run_pipeline_detailed(&rec, &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn selection_then_normalization() {
        let rec = press(3000, 900);
        let cfg = PipelineConfig {
            selected_channels: Some(vec![2, 8]),
            normalization: Normalization::Standard,
            ..Default::default()
        };
        assert!(run_pipeline(&rec, &cfg, None).is_err());
        let ds = Dataset::new(
            ActionKind::Button,
            [(0, "Success".to_string())].into(),
            vec![rec.clone(), press(2500, 1200)],
        )
        .unwrap();
        let stats = fit_pipeline_normalizer(&ds, &cfg).unwrap().unwrap();
        assert_eq!(stats.channels(), 2);
        let out = run_pipeline(&rec, &cfg, Some(&stats)).unwrap();
        assert_eq!(out.shape(), &[2, 800]);
    }

    #[test]
    fn config_json_defaults_and_validation() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        let cfg: PipelineConfig = serde_json::from_str(r#"{"cutoff_hz": 20.0, "normalization": "min_max"}"#).unwrap();
        assert_eq!(cfg.normalization, Normalization::MinMax);
        let bad = PipelineConfig {
            thresholds: Thresholds { hi: 0.1, mid: 0.2, lo: 0.3 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let nyq = PipelineConfig {
            cutoff_hz: 260.0,
            ..Default::default()
        };
        assert!(run_pipeline(&press(2000, 500), &nyq, None).is_err());
    }
}
