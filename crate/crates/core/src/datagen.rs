//! Synthetic labelled recordings with known contact onset and a known
//! class-discriminative segment.
//!
//! Every record follows the same template in the tool frame: free approach,
//! contact ramp with an impact overshoot, a rippling force plateau, one event
//! whose shape depends on the class, then release. Classes differ only inside
//! the event segment (plus noise). The signals are not physically simulated.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassMap, Dataset};
use crate::error::{Error, Result};
use crate::preprocess::rotvec_to_matrix;
use crate::record::{ActionKind, ActionRecord, Label};
use crate::tensor::Tensor;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Tool tip offset from the sensor along the tool axis, metres.
const LEVER_ARM: f64 = 0.05;
/// Contact stiffness used for the compliance displacement, N/m.
const STIFFNESS: f64 = 4000.0;
const APPROACH_SPEED: f64 = 0.02;
const RAMP_S: f64 = 0.04;
const OVERSHOOT_TAU_S: f64 = 0.024;
const OVERSHOOT: f64 = 0.6;
const RELEASE_GAP_S: f64 = 0.8;
const RELEASE_S: f64 = 0.06;
const KNOB_TORQUE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventShape {
    /// Sharp fall, hold, slower recovery (button click, detent, unlock).
    Drop,
    /// Two drops in succession.
    DoubleDrop,
    /// The first drop of [`EventShape::DoubleDrop`] alone (turn stopped between detents).
    FirstDetent,
    /// Smooth rise and fall (pushing against resistance).
    Bump,
    /// Short peak at the segment centre (end-stop hit).
    Spike,
}

impl EventShape {
    /// Signed unit profile over `u ∈ [0, 1)`.
    pub fn profile(self, u: f64) -> f64 {
        fn drop(u: f64) -> f64 {
            if !(0.0..1.0).contains(&u) {
                0.0
            } else if u < 0.15 {
                -u / 0.15
            } else if u < 0.6 {
                -1.0
            } else {
                -(1.0 - u) / 0.4
            }
        }
        match self {
            EventShape::Drop => drop(u),
            EventShape::DoubleDrop => drop(u / 0.45) + drop((u - 0.55) / 0.45),
            EventShape::FirstDetent => drop(u / 0.45),
            EventShape::Bump => (std::f64::consts::PI * u).sin().powi(2),
            EventShape::Spike => (-((u - 0.5) / 0.07).powi(2)).exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub id: u32,
    pub name: String,
    pub shape: EventShape,
    /// Event size relative to the plateau level of its channel.
    pub amplitude: f64,
    /// Tool-frame wrench channel (0..6) carrying the event.
    pub channel: usize,
    /// Lateral force during the event, relative to the plateau force.
    #[serde(default)]
    pub shear: f64,
}

fn profile(id: u32, name: &str, shape: EventShape, amplitude: f64, channel: usize, shear: f64) -> ClassProfile {
    ClassProfile {
        id,
        name: name.into(),
        shape,
        amplitude,
        channel,
        shear,
    }
}

/// Tool-frame axis the robot pushes along.
pub fn push_axis(kind: ActionKind) -> usize {
    match kind {
        ActionKind::Button | ActionKind::Switch | ActionKind::Knob => 2,
        ActionKind::Flap | ActionKind::Ldg | ActionKind::SBrake => 0,
    }
}

pub fn default_profiles(kind: ActionKind) -> Vec<ClassProfile> {
    use EventShape::*;
    let a = push_axis(kind);
    match kind {
        ActionKind::Button => vec![profile(0, "Success", Drop, 0.45, a, 0.0), profile(1, "Fail", Bump, 0.45, a, 0.0)],
        ActionKind::Switch => vec![
            profile(0, "Up", Drop, 0.5, a, 0.4),
            profile(1, "Down", Drop, 0.5, a, -0.4),
            profile(2, "Fail", Bump, 0.35, a, 0.0),
        ],
        ActionKind::Knob => vec![
            profile(0, "Success", DoubleDrop, 0.6, 5, 0.0),
            profile(1, "MidState", FirstDetent, 0.6, 5, 0.0),
            profile(2, "Fail", Bump, 0.5, 5, 0.0),
        ],
        ActionKind::Flap => vec![
            profile(0, "Up", Drop, 0.5, a, 0.4),
            profile(1, "Down", Drop, 0.5, a, -0.4),
            profile(2, "Locked", Bump, 0.6, a, 0.0),
        ],
        ActionKind::Ldg | ActionKind::SBrake => {
            let names = if kind == ActionKind::Ldg { ["Up", "Down", "FailNotMoved"] } else { ["Armed", "Retracted", "Fail"] };
            vec![
                profile(0, names[0], Spike, 1.0, a, 0.4),
                profile(1, names[1], Spike, 1.0, a, -0.4),
                profile(2, names[2], Bump, 0.25, a, 0.0),
            ]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub action_kind: ActionKind,
    /// Class templates; `None` uses [`default_profiles`].
    pub classes: Option<Vec<ClassProfile>>,
    pub count_per_class: usize,
    /// Total record count for [`generate_imbalanced`]; defaults to
    /// `count_per_class × classes`.
    pub total_records: Option<usize>,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Force noise standard deviation in N; torque and position noise scale with it.
    pub noise_std: f64,
    /// Ripple amplitude relative to the plateau force.
    pub ripple_amplitude: f64,
    pub ripple_freq_hz: f64,
    pub transient_onset_s: f64,
    pub onset_jitter_s: f64,
    /// Delay from contact to the start of the class event.
    pub event_delay_s: f64,
    pub event_jitter_s: f64,
    pub event_width_s: f64,
    pub plateau_force_n: f64,
    /// Relative spread of the plateau force between records.
    pub force_jitter: f64,
    /// Relative spread of the event amplitude between records.
    pub amplitude_jitter: f64,
    /// Maximum per-axis perturbation of the tool orientation, degrees.
    pub tilt_deg: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            action_kind: ActionKind::Button,
            classes: None,
            count_per_class: 200,
            total_records: None,
            sample_rate_hz: 500.0,
            duration_s: 4.0,
            noise_std: 0.05,
            ripple_amplitude: 0.08,
            ripple_freq_hz: 5.0,
            transient_onset_s: 1.0,
            onset_jitter_s: 0.15,
            event_delay_s: 0.6,
            event_jitter_s: 0.06,
            event_width_s: 0.3,
            plateau_force_n: 10.0,
            force_jitter: 0.15,
            amplitude_jitter: 0.15,
            tilt_deg: 15.0,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn profiles(&self) -> Vec<ClassProfile> {
        self.classes.clone().unwrap_or_else(|| default_profiles(self.action_kind))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let nonneg = [
            ("noise_std", self.noise_std),
            ("ripple_amplitude", self.ripple_amplitude),
            ("onset_jitter_s", self.onset_jitter_s),
            ("event_jitter_s", self.event_jitter_s),
            ("tilt_deg", self.tilt_deg),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return bad(format!("{name} must be finite and non-negative, got {v}"));
        }
        if !(0.0..1.0).contains(&self.force_jitter) || !(0.0..1.0).contains(&self.amplitude_jitter) {
            return bad("force_jitter and amplitude_jitter must lie in [0, 1)".into());
        }
        let positive = [
            ("sample_rate_hz", self.sample_rate_hz),
            ("duration_s", self.duration_s),
            ("ripple_freq_hz", self.ripple_freq_hz),
            ("event_width_s", self.event_width_s),
            ("plateau_force_n", self.plateau_force_n),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return bad(format!("{name} must be positive, got {v}"));
        }
        if self.count_per_class == 0 {
            return bad("count_per_class must be at least 1".into());
        }
        let earliest = self.transient_onset_s - self.onset_jitter_s;
        if earliest <= 0.0 {
            return bad("onset minus jitter must be after the start of the record".into());
        }
        if self.event_delay_s - self.event_jitter_s < RAMP_S {
            return bad("the event must start after the contact ramp".into());
        }
        let end = self.transient_onset_s
            + self.onset_jitter_s
            + self.event_delay_s
            + self.event_jitter_s
            + self.event_width_s
            + RELEASE_GAP_S
            + RELEASE_S;
        if end >= self.duration_s {
            return bad(format!("the action ends at {end:.3} s, after the record duration {} s", self.duration_s));
        }
        let profiles = self.profiles();
        if profiles.is_empty() {
            return bad("at least one class is required".into());
        }
        for p in &profiles {
            if p.channel >= 6 || !p.amplitude.is_finite() || p.amplitude < 0.0 || !p.shear.is_finite() {
                return bad(format!("class {} has an invalid event description", p.name));
            }
        }
        Ok(())
    }
}

/// Ground truth for one generated record, in sample indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    pub class_id: u32,
    /// First sample of contact.
    pub onset: usize,
    /// Half-open interval `[start, end)` holding the class event.
    pub segment: [usize; 2],
    /// First sample of release.
    pub release: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    /// Always `true`: the signals are templates, not physical simulation.
    pub non_physical: bool,
    pub spec: GenSpec,
    pub records: Vec<GroundTruth>,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: Vec<GroundTruth>,
    pub spec: GenSpec,
}

impl Generated {
    pub fn truth_for(&self, id: &str) -> Option<&GroundTruth> {
        self.truth.iter().find(|t| t.id == id)
    }

    /// Writes the records, `manifest.json` and the ground-truth sidecar; returns
    /// the manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let manifest = self.dataset.save(dir)?;
        let file = GroundTruthFile {
            non_physical: true,
            spec: self.spec.clone(),
            records: self.truth.clone(),
        };
        let path = dir.join(GROUND_TRUTH_FILE);
        fs::write(&path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruthFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// `(s/τ)·e^(1 − s/τ)` for `s ≥ 0`: peaks at 1 when `s = τ`.
fn impulse(s: f64, tau: f64) -> f64 {
    if s < 0.0 {
        0.0
    } else {
        (s / tau) * (1.0 - s / tau).exp()
    }
}

fn secs(s: f64, fs: f64) -> usize {
    (s * fs).round() as usize
}

/// One record of class `p`; the generator is consumed in a fixed order.
pub fn generate_record(spec: &GenSpec, p: &ClassProfile, id: String, rng: &mut ChaCha8Rng) -> Result<(ActionRecord, GroundTruth)> {
    let fs = spec.sample_rate_hz;
    let n = secs(spec.duration_s, fs);
    let jitter = |rng: &mut ChaCha8Rng, j: f64| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let t0 = secs(spec.transient_onset_s + jitter(rng, spec.onset_jitter_s), fs);
    let te = t0 + secs(spec.event_delay_s + jitter(rng, spec.event_jitter_s), fs);
    let width = secs(spec.event_width_s, fs).max(1);
    let tr = te + width + secs(RELEASE_GAP_S, fs);
    let force = spec.plateau_force_n * (1.0 + jitter(rng, spec.force_jitter));
    let amplitude = p.amplitude * (1.0 + jitter(rng, spec.amplitude_jitter));
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let am_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let tilt = spec.tilt_deg.to_radians();
    let rotvec = [
        std::f64::consts::PI + jitter(rng, tilt),
        jitter(rng, tilt),
        jitter(rng, tilt),
    ];

    let axis = push_axis(spec.action_kind);
    let knob = spec.action_kind == ActionKind::Knob;
    let (ramp, tau, rel) = (RAMP_S * fs, OVERSHOOT_TAU_S * fs, RELEASE_S * fs);
    let mut wrench = vec![vec![0.0; n]; 6];
    let mut travel = vec![0.0; n];
    for i in 0..n {
        let s = i as f64 - t0 as f64;
        let t = i as f64 / fs;
        let on = smoothstep(s / ramp) * (1.0 - smoothstep((i as f64 - tr as f64) / rel));
        let ripple = spec.ripple_amplitude
            * (1.0 + 0.3 * (std::f64::consts::TAU * 0.5 * t + am_phase).sin())
            * (std::f64::consts::TAU * spec.ripple_freq_hz * t + phase).sin();
        let mut f = [0.0; 6];
        f[axis] = force * (on * (1.0 + ripple) + OVERSHOOT * impulse(s, tau) + 0.3 * impulse(i as f64 - tr as f64, tau));
        if knob {
            f[5] = KNOB_TORQUE * on;
        }
        if (te..te + width).contains(&i) {
            let u = (i - te) as f64 / width as f64;
            let level = if p.channel == 5 && knob { KNOB_TORQUE } else { force };
            f[p.channel] += amplitude * level * p.shape.profile(u);
            f[1] += p.shear * force * (std::f64::consts::PI * u).sin().powi(2);
        }
        // Moment of the tip force about the sensor.
        f[3] += -LEVER_ARM * f[1];
        f[4] += LEVER_ARM * f[0];
        for (k, v) in f.iter().enumerate() {
            wrench[k][i] = *v;
        }
        travel[i] = if s < 0.0 { APPROACH_SPEED * s / fs } else { f[axis] / STIFFNESS };
    }

    if spec.noise_std > 0.0 {
        let force_noise = Normal::new(0.0, spec.noise_std).expect("valid std");
        let torque_noise = Normal::new(0.0, spec.noise_std * LEVER_ARM).expect("valid std");
        for (k, row) in wrench.iter_mut().enumerate() {
            let d = if k < 3 { &force_noise } else { &torque_noise };
            row.iter_mut().for_each(|v| *v += d.sample(rng));
        }
        let pos_noise = Normal::new(0.0, spec.noise_std / STIFFNESS).expect("valid std");
        travel.iter_mut().for_each(|v| *v += pos_noise.sample(rng));
    }

    let r = rotvec_to_matrix(rotvec);
    let to_base = |v: [f64; 3]| -> [f64; 3] { std::array::from_fn(|a| r[a][0] * v[0] + r[a][1] * v[1] + r[a][2] * v[2]) };
    let mut base = vec![vec![0.0; n]; 6];
    let mut pos = vec![vec![0.0; n]; 3];
    for i in 0..n {
        let fb = to_base([wrench[0][i], wrench[1][i], wrench[2][i]]);
        let tb = to_base([wrench[3][i], wrench[4][i], wrench[5][i]]);
        let mut p_tool = [0.0; 3];
        p_tool[axis] = travel[i];
        let pb = to_base(p_tool);
        for k in 0..3 {
            base[k][i] = fb[k];
            base[3 + k][i] = tb[k];
            pos[k][i] = pb[k];
        }
    }
    let rot = Tensor::from_rows(&(0..3).map(|k| vec![rotvec[k]; n]).collect::<Vec<_>>())?;
    let rec = ActionRecord::from_absolute_positions(
        id.clone(),
        spec.action_kind,
        fs,
        &Tensor::from_rows(&base)?,
        &Tensor::from_rows(&pos)?,
        rot,
        Label::new(p.id, p.name.clone())?,
    )?;
    let truth = GroundTruth {
        id,
        class_id: p.id,
        onset: t0,
        segment: [te, te + width],
        release: tr,
    };
    Ok((rec, truth))
}

fn generate_counts(spec: &GenSpec, counts: &[usize]) -> Result<Generated> {
    spec.validate()?;
    let profiles = spec.profiles();
    let class_map: ClassMap = profiles.iter().map(|p| (p.id, p.name.clone())).collect();
    if class_map.len() != profiles.len() {
        return Err(Error::Config("class ids must be unique".into()));
    }
    let mut records = Vec::new();
    let mut truth = Vec::new();
    for (ci, (p, &count)) in profiles.iter().zip(counts).enumerate() {
        for j in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(((ci as u64) << 32) | j as u64);
            let id = format!("{}_{}_{j:04}", spec.action_kind, p.name.to_ascii_lowercase());
            let (r, t) = generate_record(spec, p, id, &mut rng)?;
            records.push(r);
            truth.push(t);
        }
    }
    Ok(Generated {
        dataset: Dataset::new(spec.action_kind, class_map, records)?,
        truth,
        spec: spec.clone(),
    })
}

/// `count_per_class` records of every class. Deterministic for a given spec.
pub fn generate(spec: &GenSpec) -> Result<Generated> {
    let k = spec.profiles().len();
    generate_counts(spec, &vec![spec.count_per_class; k])
}

/// Knob-style three-class set whose mid-state class holds `minority_fraction`
/// of the records; the remaining records are split evenly over the other classes.
pub fn generate_imbalanced(spec: &GenSpec, minority_fraction: f64) -> Result<Generated> {
    if !(minority_fraction > 0.0 && minority_fraction < 0.5) {
        return Err(Error::Config(format!("minority fraction must lie in (0, 0.5), got {minority_fraction}")));
    }
    if spec.action_kind != ActionKind::Knob || spec.classes.is_some() {
        return Err(Error::Config("the imbalanced set uses the default knob classes".into()));
    }
    let total = spec.total_records.unwrap_or(spec.count_per_class * 3);
    let minority = ((minority_fraction * total as f64).round() as usize).max(1);
    let rest = total.saturating_sub(minority);
    let counts = [rest - rest / 2, minority, rest / 2];
    generate_counts(spec, &counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{channels_to_tcp, isolate_transient, PipelineConfig};
    use rustfft::{num_complex::Complex, FftPlanner};

    fn quiet(kind: ActionKind) -> GenSpec {
        GenSpec {
            action_kind: kind,
            count_per_class: 1,
            noise_std: 0.0,
            ripple_amplitude: 0.0,
            onset_jitter_s: 0.0,
            event_jitter_s: 0.0,
            force_jitter: 0.0,
            amplitude_jitter: 0.0,
            ..Default::default()
        }
    }

    fn tool_frame(r: &ActionRecord) -> Tensor<f64> {
        channels_to_tcp(&r.channels, &r.tcp_rotvec).unwrap()
    }

    #[test]
    fn noiseless_success_has_one_click_of_configured_depth() {
        let spec = quiet(ActionKind::Button);
        let g = generate(&spec).unwrap();
        let rec = &g.dataset.records()[0];
        let t = g.truth_for(&rec.id).unwrap();
        assert_eq!(rec.label.class_name, "Success");
        assert_eq!(t.onset, 500);
        assert_eq!(t.segment, [800, 950]);
        let fz = tool_frame(rec).row(2).to_vec();
        let f = spec.plateau_force_n;
        let depth = 0.45 * f;
        let min = fz[t.segment[0]..t.segment[1]].iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min - (f - depth)).abs() < 1e-9, "{min}");
        // Below the half-depth line exactly once, inside the segment.
        let low: Vec<usize> = (t.onset + 100..t.release).filter(|&i| fz[i] < f - depth / 2.0).collect();
        assert!(!low.is_empty());
        assert!(low.windows(2).all(|w| w[1] == w[0] + 1));
        assert!(low[0] >= t.segment[0] && *low.last().unwrap() < t.segment[1]);
        // The impact overshoot has decayed 200 samples after contact.
        for i in (t.onset + 200..t.segment[0]).chain(t.segment[1]..t.release) {
            assert!((fz[i] - f).abs() < 1e-4, "sample {i}: {}", fz[i]);
        }
    }

    #[test]
    fn classes_differ_only_inside_the_segment() {
        for kind in ActionKind::ALL {
            let spec = GenSpec { action_kind: kind, ..Default::default() };
            // Same random stream for every class, so nuisance draws and noise coincide.
            let make = |p: &ClassProfile| generate_record(&spec, p, "r".into(), &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
            let profiles = spec.profiles();
            let (r0, t0) = make(&profiles[0]);
            for p in &profiles[1..] {
                let (r, t) = make(p);
                assert_eq!(t.segment, t0.segment);
                let mut inside = 0.0f64;
                for c in 0..9 {
                    for i in 0..r.len() {
                        let d = (r0.channels.at2(c, i) - r.channels.at2(c, i)).abs();
                        if (t.segment[0]..t.segment[1]).contains(&i) {
                            inside = inside.max(d);
                        } else {
                            assert!(d < 1e-12, "{kind} {} c{c} i{i}", p.name);
                        }
                    }
                }
                assert!(inside > 1e-3, "{kind} {}", p.name);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = GenSpec { count_per_class: 3, ..Default::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = generate(&GenSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.dataset.records()[0].channels, c.dataset.records()[0].channels);
    }

    #[test]
    fn ripple_peak_at_configured_frequency() {
        let spec = GenSpec {
            noise_std: 0.0,
            ripple_amplitude: 0.1,
            ripple_freq_hz: 6.0,
            event_delay_s: 1.2,
            duration_s: 5.0,
            ..quiet(ActionKind::Button)
        };
        let g = generate(&spec).unwrap();
        let rec = &g.dataset.records()[0];
        let t = &g.truth[0];
        let fz = tool_frame(rec).row(2).to_vec();
        let seg = &fz[t.onset + 100..t.segment[0]];
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        let mut buf: Vec<Complex<f64>> = seg.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let half = &buf[1..buf.len() / 2];
        let peak = 1 + half.iter().enumerate().fold(0, |b, (i, v)| if v.norm() > half[b].norm() { i } else { b });
        let expected = spec.ripple_freq_hz * seg.len() as f64 / spec.sample_rate_hz;
        assert!((peak as f64 - expected).abs() <= 1.0, "{peak} vs {expected}");
    }

    #[test]
    fn detector_finds_contact_on_defaults() {
        let cfg = PipelineConfig::default();
        for kind in ActionKind::ALL {
            let g = generate(&GenSpec { action_kind: kind, count_per_class: 8, seed: 3, ..Default::default() }).unwrap();
            for r in g.dataset.records() {
                let t = g.truth_for(&r.id).unwrap();
                let iso = isolate_transient(r, &cfg).unwrap();
                assert!((iso.onset as i64 - t.onset as i64).abs() <= 60, "{}: {} vs {}", r.id, iso.onset, t.onset);
                assert!(t.segment[1] <= iso.onset + cfg.extract_len);
            }
        }
    }

    #[test]
    fn imbalanced_counts() {
        let spec = GenSpec { action_kind: ActionKind::Knob, total_records: Some(500), ..Default::default() };
        let g = generate_imbalanced(&spec, 0.1).unwrap();
        let counts = g.dataset.class_counts();
        assert_eq!(counts[&1], 50);
        assert_eq!(counts.values().sum::<usize>(), 500);
        assert_eq!(g.dataset.class_map()[&1], "MidState");
        assert!(generate_imbalanced(&spec, 0.5).is_err());
        assert!(generate_imbalanced(&GenSpec::default(), 0.1).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = generate(&GenSpec { count_per_class: 2, ..Default::default() }).unwrap();
        let manifest = g.save(dir.path()).unwrap();
        let back = Dataset::load_manifest(&manifest).unwrap();
        assert_eq!(back.len(), 4);
        let truth = load_ground_truth(&dir.path().join(GROUND_TRUTH_FILE)).unwrap();
        assert!(truth.non_physical);
        assert_eq!(truth.records, g.truth);
        assert_eq!(truth.spec, g.spec);
    }

    #[test]
    fn invalid_specs() {
        for bad in [
            GenSpec { noise_std: -1.0, ..Default::default() },
            GenSpec { count_per_class: 0, ..Default::default() },
            GenSpec { transient_onset_s: 3.5, ..Default::default() },
            GenSpec { transient_onset_s: 0.1, ..Default::default() },
            GenSpec { event_delay_s: 0.0, event_jitter_s: 0.0, ..Default::default() },
        ] {
            assert!(matches!(generate(&bad), Err(Error::Config(_))), "{bad:?}");
        }
        let json = r#"{"action_kind":"ldg","count_per_class":2,"seed":4}"#;
        let spec: GenSpec = serde_json::from_str(json).unwrap();
        assert_eq!(generate(&spec).unwrap().dataset.len(), 6);
        assert!(serde_json::from_str::<GenSpec>(r#"{"colour":1}"#).is_err());
    }
}
