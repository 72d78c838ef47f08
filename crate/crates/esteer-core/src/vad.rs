//! The continuous valence-arousal-dominance emotion space.
//!
//! Every axis spans [-10, 10]; (0, 0, 0) is neutral. A label table maps
//! discrete emotion tokens to coordinates, and [`map_to_deltas`] translates
//! coordinates to per-axis latent offsets for steering.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VAD_MIN: f64 = -10.0;
pub const VAD_MAX: f64 = 10.0;

/// One of the three emotion axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VadAxis {
    Valence,
    Arousal,
    Dominance,
}

impl VadAxis {
    pub const ALL: [VadAxis; 3] = [VadAxis::Valence, VadAxis::Arousal, VadAxis::Dominance];

    pub fn name(self) -> &'static str {
        match self {
            VadAxis::Valence => "valence",
            VadAxis::Arousal => "arousal",
            VadAxis::Dominance => "dominance",
        }
    }

    pub fn index(self) -> usize {
        match self {
            VadAxis::Valence => 0,
            VadAxis::Arousal => 1,
            VadAxis::Dominance => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "valence" | "v" => Ok(VadAxis::Valence),
            "arousal" | "a" => Ok(VadAxis::Arousal),
            "dominance" | "d" => Ok(VadAxis::Dominance),
            other => Err(Error::Config(format!("unknown axis {other:?}"))),
        }
    }
}

impl fmt::Display for VadAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A point in the emotion space. Components always lie in [-10, 10];
/// constructors either clamp or reject out-of-range values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadVector {
    pub e_v: f64,
    pub e_a: f64,
    pub e_d: f64,
}

impl VadVector {
    pub const NEUTRAL: VadVector = VadVector {
        e_v: 0.0,
        e_a: 0.0,
        e_d: 0.0,
    };

    /// Strict constructor: rejects non-finite or out-of-range components.
    pub fn new(e_v: f64, e_a: f64, e_d: f64) -> Result<Self> {
        for (axis, value) in [("valence", e_v), ("arousal", e_a), ("dominance", e_d)] {
            if !value.is_finite() || !(VAD_MIN..=VAD_MAX).contains(&value) {
                return Err(Error::VadOutOfRange { axis, value });
            }
        }
        Ok(VadVector { e_v, e_a, e_d })
    }

    /// Clamping constructor: out-of-range components are pulled to the
    /// nearest bound, non-finite components to 0.
    pub fn clamped(e_v: f64, e_a: f64, e_d: f64) -> Self {
        let clamp = |x: f64| {
            if x.is_finite() {
                x.clamp(VAD_MIN, VAD_MAX)
            } else {
                0.0
            }
        };
        VadVector {
            e_v: clamp(e_v),
            e_a: clamp(e_a),
            e_d: clamp(e_d),
        }
    }

    pub fn get(&self, axis: VadAxis) -> f64 {
        match axis {
            VadAxis::Valence => self.e_v,
            VadAxis::Arousal => self.e_a,
            VadAxis::Dominance => self.e_d,
        }
    }

    pub fn with_axis(mut self, axis: VadAxis, value: f64) -> Self {
        match axis {
            VadAxis::Valence => self.e_v = value.clamp(VAD_MIN, VAD_MAX),
            VadAxis::Arousal => self.e_a = value.clamp(VAD_MIN, VAD_MAX),
            VadAxis::Dominance => self.e_d = value.clamp(VAD_MIN, VAD_MAX),
        }
        self
    }

    /// A single-axis point: `value` on `axis`, 0 elsewhere.
    pub fn on_axis(axis: VadAxis, value: f64) -> Self {
        VadVector::NEUTRAL.with_axis(axis, value)
    }

    pub fn is_neutral(&self) -> bool {
        self.e_v == 0.0 && self.e_a == 0.0 && self.e_d == 0.0
    }

    pub fn components(&self) -> [f64; 3] {
        [self.e_v, self.e_a, self.e_d]
    }
}

impl fmt::Display for VadVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.e_v, self.e_a, self.e_d)
    }
}

/// A named point in the space, e.g. "happy".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionLabel {
    pub name: String,
    pub coordinates: VadVector,
}

/// Table of emotion labels. Names are stored lowercase and unique; lookup is
/// case-insensitive.
#[derive(Debug, Clone)]
pub struct LabelTable {
    labels: Vec<EmotionLabel>,
    index: HashMap<String, usize>,
}

impl LabelTable {
    pub fn new(labels: impl IntoIterator<Item = EmotionLabel>) -> Result<Self> {
        let mut table = LabelTable {
            labels: Vec::new(),
            index: HashMap::new(),
        };
        for mut label in labels {
            label.name = label.name.to_lowercase();
            if table.index.contains_key(&label.name) {
                return Err(Error::LabelTableParse {
                    line: 0,
                    msg: format!("duplicate label {:?}", label.name),
                });
            }
            table.index.insert(label.name.clone(), table.labels.len());
            table.labels.push(label);
        }
        Ok(table)
    }

    /// Parse the tab-separated label table format:
    /// `label<TAB>v<TAB>a<TAB>d`, values in [-10, 10], `#` comments allowed.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut labels = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(Error::LabelTableParse {
                    line: i + 1,
                    msg: format!("expected 4 tab-separated fields, got {}", parts.len()),
                });
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|e| Error::LabelTableParse {
                    line: i + 1,
                    msg: format!("bad number {s:?}: {e}"),
                })
            };
            let coords = VadVector::new(parse(parts[1])?, parse(parts[2])?, parse(parts[3])?)
                .map_err(|e| Error::LabelTableParse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            labels.push(EmotionLabel {
                name: parts[0].trim().to_string(),
                coordinates: coords,
            });
        }
        LabelTable::new(labels)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        LabelTable::from_tsv(&text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# label\tv\ta\td\n");
        for l in &self.labels {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                l.name, l.coordinates.e_v, l.coordinates.e_a, l.coordinates.e_d
            ));
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&EmotionLabel> {
        self.index
            .get(&name.to_lowercase())
            .map(|&i| &self.labels[i])
    }

    pub fn labels(&self) -> &[EmotionLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Look an emotion label up in the table, clamping coordinates into range.
pub fn vad_from_label(label: &str, table: &LabelTable) -> Result<VadVector> {
    let entry = table
        .get(label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
    let c = entry.coordinates;
    Ok(VadVector::clamped(c.e_v, c.e_a, c.e_d))
}

/// Per-axis positive scale bound for latent offsets, in latent-activation
/// units. `delta / delta_max` is the signed fraction of full steering
/// strength on that axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaCalibration {
    pub delta_max: [f64; 3],
}

impl DeltaCalibration {
    pub fn new(delta_max: [f64; 3]) -> Result<Self> {
        for (axis, &value) in ["valence", "arousal", "dominance"].iter().zip(&delta_max) {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidDeltaMax { axis, value });
            }
        }
        Ok(DeltaCalibration { delta_max })
    }

    pub fn uniform(delta_max: f64) -> Result<Self> {
        DeltaCalibration::new([delta_max; 3])
    }

    pub fn for_axis(&self, axis: VadAxis) -> f64 {
        self.delta_max[axis.index()]
    }
}

/// Linear map from a VAD point to per-axis latent offsets:
/// `delta_i = (e_i / 10) * delta_max_i`. Sign follows the coordinate; the
/// endpoint |e_i| = 10 maps exactly onto delta_max_i.
pub fn map_to_deltas(e: &VadVector, calib: &DeltaCalibration) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, axis) in VadAxis::ALL.iter().enumerate() {
        out[i] = e.get(*axis) / VAD_MAX * calib.delta_max[i];
    }
    out
}

/// Raw TSV the bundled label table is built from.
pub const BUILTIN_LABELS_TSV: &str = include_str!("../data/labels.tsv");

/// The label table bundled with the crate, derived from the bundled VAD
/// lexicon (see [`crate::eval::lexicon`]) rescaled to [-10, 10].
pub fn builtin_label_table() -> LabelTable {
    LabelTable::from_tsv(BUILTIN_LABELS_TSV).expect("bundled label table parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neutral_is_origin() {
        let table = builtin_label_table();
        assert_eq!(
            vad_from_label("neutral", &table).unwrap(),
            VadVector::NEUTRAL
        );
    }

    #[test]
    fn happy_has_positive_valence() {
        // The bundled table comes from the lexicon ingest rescaled to
        // [-10, 10]; only the sign is contractual.
        let table = builtin_label_table();
        let v = vad_from_label("happy", &table).unwrap();
        assert!(v.e_v > 0.0);
    }

    #[test]
    fn unknown_label_is_an_error() {
        let table = builtin_label_table();
        match vad_from_label("zzz-not-a-label", &table) {
            Err(Error::UnknownLabel(name)) => assert_eq!(name, "zzz-not-a-label"),
            other => panic!("expected UnknownLabel, got {other:?}"),
        }
    }

    #[test]
    fn lookup_is_case_insensitive() {
        let table = builtin_label_table();
        assert_eq!(
            vad_from_label("HAPPY", &table).unwrap(),
            vad_from_label("happy", &table).unwrap()
        );
    }

    #[test]
    fn all_builtin_labels_in_range() {
        let table = builtin_label_table();
        assert!(!table.is_empty());
        for l in table.labels() {
            for c in l.coordinates.components() {
                assert!((VAD_MIN..=VAD_MAX).contains(&c), "{} out of range", l.name);
            }
        }
    }

    #[test]
    fn strict_constructor_rejects() {
        assert!(VadVector::new(11.0, 0.0, 0.0).is_err());
        assert!(VadVector::new(0.0, f64::NAN, 0.0).is_err());
        assert!(VadVector::new(10.0, -10.0, 0.0).is_ok());
    }

    #[test]
    fn clamping_is_idempotent() {
        let v = VadVector::clamped(12.0, -15.0, 3.0);
        let w = VadVector::clamped(v.e_v, v.e_a, v.e_d);
        assert_eq!(v, w);
        assert_eq!(v.e_v, 10.0);
        assert_eq!(v.e_a, -10.0);
    }

    #[test]
    fn deltas_trivial_points() {
        let calib = DeltaCalibration::new([4.0, 4.0, 4.0]).unwrap();
        assert_eq!(
            map_to_deltas(&VadVector::NEUTRAL, &calib),
            [0.0, 0.0, 0.0]
        );
        let e = VadVector::new(10.0, 0.0, 0.0).unwrap();
        assert_eq!(map_to_deltas(&e, &calib), [4.0, 0.0, 0.0]);
        let calib = DeltaCalibration::new([4.0, 2.0, 4.0]).unwrap();
        let e = VadVector::new(-5.0, 5.0, 0.0).unwrap();
        let d = map_to_deltas(&e, &calib);
        assert!((d[0] - (-2.0)).abs() < 1e-12);
        assert!((d[1] - 1.0).abs() < 1e-12);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn delta_calibration_validation() {
        assert!(DeltaCalibration::new([0.0, 1.0, 1.0]).is_err());
        assert!(DeltaCalibration::new([1.0, -2.0, 1.0]).is_err());
        assert!(DeltaCalibration::new([1.0, 1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let table = builtin_label_table();
        let again = LabelTable::from_tsv(&table.to_tsv()).unwrap();
        assert_eq!(table.len(), again.len());
        for l in table.labels() {
            assert_eq!(again.get(&l.name).unwrap().coordinates, l.coordinates);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // map_to_deltas is linear in the coordinate, exact to 1e-12.
            #[test]
            fn deltas_linear_in_scale(
                v in -10.0f64..10.0,
                a in -10.0f64..10.0,
                d in -10.0f64..10.0,
                scale in -1.0f64..1.0,
            ) {
                let calib = DeltaCalibration::new([4.0, 2.5, 3.0]).unwrap();
                let e = VadVector::new(v, a, d).unwrap();
                let scaled = VadVector::new(v * scale, a * scale, d * scale).unwrap();
                let base = map_to_deltas(&e, &calib);
                let got = map_to_deltas(&scaled, &calib);
                for i in 0..3 {
                    prop_assert!((got[i] - scale * base[i]).abs() <= 1e-12);
                }
            }

            #[test]
            fn delta_within_bounds_and_sign(
                v in -10.0f64..=10.0,
                m in 0.1f64..8.0,
            ) {
                let calib = DeltaCalibration::new([m, m, m]).unwrap();
                let e = VadVector::clamped(v, 0.0, 0.0);
                let d = map_to_deltas(&e, &calib);
                prop_assert!(d[0].abs() <= m + 1e-12);
                prop_assert!(d[0] == 0.0 || d[0].signum() == v.signum());
            }
        }
    }
}
