use forcecheck_core::augment::{balance_dataset, AugmentPolicy};
use forcecheck_core::datagen::{generate, load_ground_truth, GenSpec, GROUND_TRUTH_FILE};
use forcecheck_core::dataset::{split_dataset, Dataset};
use forcecheck_core::explain::{export_attribution, gradcam, GradCamOptions};
use forcecheck_core::nn::{
    build_preset, load_model, model_from_bytes, model_to_bytes, save_model, train, InputBuilder, ModelGraph, ModelMeta,
    Preset, TrainConfig,
};
use forcecheck_core::preprocess::{fit_pipeline_normalizer, Normalization, PipelineConfig};
use forcecheck_core::record::Channel;
use forcecheck_core::wavelet::CwtConfig;
use forcecheck_core::Error;

fn small_set(per_class: usize, seed: u64) -> forcecheck_core::datagen::Generated {
    generate(&GenSpec {
        count_per_class: per_class,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn untrained(data: &Dataset, preset: Preset) -> ModelGraph<f32> {
    let pipeline = PipelineConfig {
        normalization: Normalization::Standard,
        ..Default::default()
    };
    let norm = fit_pipeline_normalizer(data, &pipeline).unwrap();
    let meta = ModelMeta {
        preset: Some(preset),
        action_kind: Some(data.action_kind()),
        pipeline,
        norm,
        cwt: CwtConfig::default(),
    };
    let arch = build_preset(data.action_kind(), preset, data.num_classes(), 800, 128);
    ModelGraph::new(arch, data.class_map().clone(), meta, 3).unwrap()
}

#[test]
fn generated_dataset_round_trips_through_disk() {
    let g = small_set(4, 21);
    let dir = tempfile::tempdir().unwrap();
    let manifest = g.save(dir.path()).unwrap();
    let back = Dataset::load_manifest(&manifest).unwrap();
    assert_eq!(back.class_map(), g.dataset.class_map());
    assert_eq!(back.len(), g.dataset.len());
    for (a, b) in back.records().iter().zip(g.dataset.records()) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.label, b.label);
        let diff = a
            .channels
            .data()
            .iter()
            .zip(b.channels.data())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff < 1e-9, "{}: {diff}", a.id);
    }
    let truth = load_ground_truth(&dir.path().join(GROUND_TRUTH_FILE)).unwrap();
    assert!(truth.non_physical);
    assert_eq!(truth.records.len(), g.dataset.len());
}

#[test]
fn augmented_copies_only_reach_training() {
    let g = small_set(10, 5);
    let mut seen_fail = 0;
    let kept: Vec<_> = g
        .dataset
        .records()
        .iter()
        .filter(|r| r.label.class_id == 0 || {
            seen_fail += 1;
            seen_fail <= 5
        })
        .cloned()
        .collect();
    let uneven = g.dataset.with_records(kept).unwrap();
    let balanced = balance_dataset(&uneven, &AugmentPolicy::default()).unwrap();
    assert!(balanced.len() > uneven.len());
    let (tr, va, te) = split_dataset(&balanced, (0.6, 0.2, 0.2), 1).unwrap();
    assert!(va.records().iter().chain(te.records()).all(|r| !r.is_augmented()));
    let augmented = balanced.records().iter().filter(|r| r.is_augmented()).count();
    assert_eq!(tr.records().iter().filter(|r| r.is_augmented()).count(), augmented);
}

#[test]
fn trained_model_survives_save_and_load() {
    let g = small_set(10, 8);
    let (tr, va, te) = split_dataset(&g.dataset, (0.6, 0.2, 0.2), 2).unwrap();
    let model = untrained(&tr, Preset::Cnn1d);
    let mut ib = InputBuilder::new();
    let s_tr = ib.samples(&model, &tr).unwrap();
    let s_va = ib.samples(&model, &va).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed: 4,
        ..Default::default()
    };
    let (model, history) = train(model, &s_tr, &s_va, &cfg).unwrap();
    assert!(!history.epochs.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fckm");
    save_model(&model, &path).unwrap();
    let back: ModelGraph<f32> = load_model(&path).unwrap();
    let wide: ModelGraph<f64> = load_model(&path).unwrap();
    for s in ib.samples(&model, &te).unwrap() {
        let p = model.predict(&s.input).unwrap();
        assert_eq!(back.predict(&s.input).unwrap(), p);
        assert_eq!(back.class_ids(), wide.class_ids());
    }

    let bytes = model_to_bytes(&model).unwrap();
    assert_eq!(bytes, std::fs::read(&path).unwrap());
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 1;
    assert!(matches!(model_from_bytes::<f32>(&bad), Err(Error::Checksum)));
    assert!(matches!(model_from_bytes::<f32>(&bytes[..bytes.len() - 1]), Err(Error::Checksum)));
}

#[test]
fn attribution_exports_for_every_branch() {
    let g = small_set(3, 13);
    let model = untrained(&g.dataset, Preset::HybridSpecific);
    let mut ib = InputBuilder::new();
    let rec = &g.dataset.records()[0];
    let (input, iso) = ib.from_record(&model, rec).unwrap();
    let names: Vec<String> = (0..9).map(|c| Channel::from_index(c).unwrap().name().to_string()).collect();
    let dir = tempfile::tempdir().unwrap();
    for (b, branch) in model.arch().branches.iter().enumerate() {
        if model.last_conv(b).is_none() {
            continue;
        }
        let att = gradcam(&model, &input, rec.label.class_id, b, GradCamOptions::default()).unwrap();
        assert_eq!(*att.heatmap.shape().last().unwrap(), 800);
        assert!(att.heatmap.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let background = (att.heatmap.ndim() == 2).then(|| att.heatmap.clone());
        let (csv, png) =
            export_attribution(&att, &iso.window, &names, rec.sample_rate_hz, background.as_ref(), dir.path(), &branch.name)
                .unwrap();
        assert!(csv.exists() && png.exists());
        image::open(&png).unwrap();
    }
}
