//! Turning records into model inputs: preprocessing, per-branch channel
//! selection, scaleograms for 2D branches and stem precomputation.

use std::collections::BTreeMap;

use super::arch::InputSelector;
use super::model::{ModelGraph, ModelInput};
use super::train::Sample;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::preprocess::{run_pipeline_detailed, Isolated};
use crate::record::ActionRecord;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wavelet::CwtPlan;

/// Reuses one CWT plan across windows of the same length.
pub struct InputBuilder<T: Scalar> {
    plan: Option<CwtPlan<T>>,
}

impl<T: Scalar> Default for InputBuilder<T> {
    fn default() -> Self {
        InputBuilder { plan: None }
    }
}

impl<T: Scalar> InputBuilder<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds branch inputs from a preprocessed `[C, N]` window.
    pub fn from_window(&mut self, model: &ModelGraph<T>, window: &Tensor<f64>) -> Result<ModelInput<T>> {
        let arch = model.arch();
        if window.ndim() != 2 || window.cols() != arch.input_len {
            return Err(Error::Shape(format!(
                "model expects windows of {} samples, got {:?}",
                arch.input_len,
                window.shape()
            )));
        }
        let cfg = &model.meta().cwt;
        if arch.branches.iter().any(|b| b.input.is_2d()) {
            if cfg.output_height != arch.scaleogram_height {
                return Err(Error::Config(format!(
                    "scaleogram height {} differs from the architecture's {}",
                    cfg.output_height, arch.scaleogram_height
                )));
            }
            if self.plan.as_ref().map(|p| p.len() != window.cols() || p.config() != cfg).unwrap_or(true) {
                self.plan = Some(CwtPlan::new(window.cols(), cfg)?);
            }
        }
        let x: Tensor<T> = window.cast();
        let mut scaleograms: BTreeMap<usize, Tensor<T>> = BTreeMap::new();
        let mut branches = Vec::with_capacity(arch.branches.len());
        let mut stems = Vec::with_capacity(arch.branches.len());
        for (b, br) in arch.branches.iter().enumerate() {
            let t = match &br.input {
                InputSelector::Signals1d(ch) => x.select_rows(ch)?,
                InputSelector::Scaleograms2d(ch) => {
                    let plan = self.plan.as_ref().expect("plan built above");
                    let h = arch.scaleogram_height;
                    let mut data = Vec::with_capacity(ch.len() * h * x.cols());
                    for &c in ch {
                        if c >= x.rows() {
                            return Err(Error::OutOfRange { index: c, len: x.rows() });
                        }
                        if !scaleograms.contains_key(&c) {
                            scaleograms.insert(c, plan.scaleogram(x.row(c), c)?.values);
                        }
                        data.extend_from_slice(scaleograms[&c].data());
                    }
                    Tensor::from_vec(&[ch.len(), h, x.cols()], data)?
                }
            };
            let stem = model.stem_len(b);
            branches.push(model.run_branch_prefix(b, &t, 0, stem)?);
            stems.push(stem);
        }
        Ok(ModelInput { branches, stems })
    }

    /// Runs the model's stored pipeline (with its fitted normalizer) on a raw record.
    pub fn from_record(&mut self, model: &ModelGraph<T>, rec: &ActionRecord) -> Result<(ModelInput<T>, Isolated)> {
        let meta = model.meta();
        let iso = run_pipeline_detailed(rec, &meta.pipeline, meta.norm.as_ref())?;
        let input = self.from_window(model, &iso.window)?;
        Ok((input, iso))
    }

    /// Prepares every record of a labelled dataset; class maps must agree.
    pub fn samples(&mut self, model: &ModelGraph<T>, d: &Dataset) -> Result<Vec<Sample<T>>> {
        check_class_map(model, d)?;
        d.records()
            .iter()
            .map(|r| {
                let (input, _) = self.from_record(model, r)?;
                let target = d.class_index(r.label.class_id).expect("validated dataset");
                Ok(Sample { input, target })
            })
            .collect()
    }
}

pub fn check_class_map<T: Scalar>(model: &ModelGraph<T>, d: &Dataset) -> Result<()> {
    if model.class_map() != d.class_map() {
        return Err(Error::ClassMapMismatch(format!(
            "model classes {:?} vs dataset classes {:?}",
            model.class_map(),
            d.class_map()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::{build_preset, Preset};
    use crate::nn::model::tests::{classes, meta_for};
    use crate::nn::model::Mode;
    use crate::record::ActionKind;
    use crate::wavelet::scaleogram_stack;

    #[test]
    fn hybrid_inputs_match_direct_computation() {
        let len = 200;
        let arch = build_preset(ActionKind::Button, Preset::HybridUnitMeasure, 2, len, 128);
        let m: ModelGraph<f64> = ModelGraph::new(arch, classes(2), meta_for(len), 1).unwrap();
        let w = Tensor::from_vec(&[9, len], (0..9 * len).map(|i| ((i * 31 % 47) as f64 * 0.37).sin()).collect()).unwrap();
        let input = InputBuilder::new().from_window(&m, &w).unwrap();
        assert_eq!(input.stems, vec![0, 0, 0, 1, 1]);
        assert_eq!(input.branches[0], w.select_rows(&[0, 1, 2]).unwrap());
        let direct = scaleogram_stack(&w, &m.meta().cwt, &[3, 4, 5]).unwrap();
        assert_eq!(input.branches[4], m.run_branch_prefix(4, &direct, 0, 1).unwrap());
        assert!(m.forward(&input, Mode::Eval).is_ok());
        let short = Tensor::<f64>::zeros(&[9, len - 1]);
        assert!(InputBuilder::new().from_window(&m, &short).is_err());
    }
}
