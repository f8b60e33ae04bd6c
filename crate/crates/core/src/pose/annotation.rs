use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::PoseError;

pub const NUM_JOINTS: usize = 14;

/// The fourteen annotated body joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Joint {
    Head,
    Neck,
    RShoulder,
    RElbow,
    RWrist,
    LShoulder,
    LElbow,
    LWrist,
    RHip,
    RKnee,
    RAnkle,
    LHip,
    LKnee,
    LAnkle,
}

impl Joint {
    pub const ALL: [Joint; NUM_JOINTS] = [
        Joint::Head,
        Joint::Neck,
        Joint::RShoulder,
        Joint::RElbow,
        Joint::RWrist,
        Joint::LShoulder,
        Joint::LElbow,
        Joint::LWrist,
        Joint::RHip,
        Joint::RKnee,
        Joint::RAnkle,
        Joint::LHip,
        Joint::LKnee,
        Joint::LAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::Head => "head",
            Joint::Neck => "neck",
            Joint::RShoulder => "r_shoulder",
            Joint::RElbow => "r_elbow",
            Joint::RWrist => "r_wrist",
            Joint::LShoulder => "l_shoulder",
            Joint::LElbow => "l_elbow",
            Joint::LWrist => "l_wrist",
            Joint::RHip => "r_hip",
            Joint::RKnee => "r_knee",
            Joint::RAnkle => "r_ankle",
            Joint::LHip => "l_hip",
            Joint::LKnee => "l_knee",
            Joint::LAnkle => "l_ankle",
        }
    }

    pub fn from_name(name: &str) -> Option<Joint> {
        Joint::ALL.into_iter().find(|j| j.name() == name)
    }
}

impl fmt::Display for Joint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A localised joint. `occluded` joints still carry coordinates; truncated
/// joints are `None` in [`PoseAnnotation::joints`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointObservation {
    pub x: f64,
    pub y: f64,
    pub occluded: bool,
}

/// Torso orientation in degrees; pitch and roll may be missing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorsoRotation {
    pub yaw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roll: Option<f64>,
}

/// Where joint positions came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum PoseSource {
    /// Ground-truth annotation.
    #[default]
    #[serde(rename = "GT")]
    Gt,
    /// Externally estimated (pictorial-structures style) prediction.
    #[serde(rename = "PS")]
    Ps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseAnnotation {
    pub frame: usize,
    pub person_id: u32,
    pub activity: u32,
    pub torso_rotation: Option<TorsoRotation>,
    pub joints: [Option<JointObservation>; NUM_JOINTS],
    pub source: PoseSource,
}

impl PoseAnnotation {
    pub fn joint(&self, j: Joint) -> Option<(f64, f64)> {
        self.joints[j.index()].map(|o| (o.x, o.y))
    }

    pub fn positions(&self) -> [Option<(f64, f64)>; NUM_JOINTS] {
        self.joints.map(|o| o.map(|o| (o.x, o.y)))
    }

    pub fn occluded_count(&self) -> usize {
        self.joints.iter().flatten().filter(|o| o.occluded).count()
    }

    pub fn truncated_count(&self) -> usize {
        self.joints.iter().filter(|o| o.is_none()).count()
    }

    pub fn localized_count(&self) -> usize {
        self.joints.iter().flatten().count()
    }

    /// Checks finiteness and, when frame dimensions are known, that every
    /// present joint lies inside the frame.
    pub fn validate(&self, bounds: Option<(usize, usize)>) -> Result<(), PoseError> {
        for (j, obs) in Joint::ALL.iter().zip(self.joints.iter()) {
            let Some(o) = obs else { continue };
            if !o.x.is_finite() || !o.y.is_finite() {
                return Err(PoseError::Parse(format!("non-finite coordinate for {j}")));
            }
            let outside = match bounds {
                Some((w, h)) => o.x < 0.0 || o.y < 0.0 || o.x > (w - 1) as f64 || o.y > (h - 1) as f64,
                None => o.x < 0.0 || o.y < 0.0,
            };
            if outside {
                return Err(PoseError::InvariantViolation(format!(
                    "{j} at ({}, {}) lies outside the frame (frame {}, person {})",
                    o.x, o.y, self.frame, self.person_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let mut joints = Map::new();
        for (j, obs) in Joint::ALL.iter().zip(self.joints.iter()) {
            let v = match obs {
                Some(o) => serde_json::json!({"x": o.x, "y": o.y, "occluded": o.occluded}),
                None => Value::Null,
            };
            joints.insert(j.name().to_string(), v);
        }
        serde_json::json!({
            "frame": self.frame,
            "person_id": self.person_id,
            "activity": self.activity,
            "source": self.source,
            "torso_rotation": self.torso_rotation,
            "joints": joints,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self, PoseError> {
        let perr = |m: &str| PoseError::Parse(m.to_string());
        let obj = v.as_object().ok_or_else(|| perr("record is not an object"))?;
        let uint = |key: &str| -> Result<u64, PoseError> {
            obj.get(key)
                .and_then(Value::as_u64)
                .ok_or_else(|| PoseError::Parse(format!("missing or invalid {key:?}")))
        };
        let frame = uint("frame")? as usize;
        let person_id = uint("person_id")? as u32;
        let activity = uint("activity")? as u32;
        let source = match obj.get("source") {
            None | Some(Value::Null) => PoseSource::Gt,
            Some(s) => serde_json::from_value(s.clone()).map_err(|e| PoseError::Parse(e.to_string()))?,
        };
        let torso_rotation = match obj.get("torso_rotation") {
            None | Some(Value::Null) => None,
            Some(r) => Some(serde_json::from_value(r.clone()).map_err(|e| PoseError::Parse(e.to_string()))?),
        };
        let jobj = obj
            .get("joints")
            .and_then(Value::as_object)
            .ok_or_else(|| perr("missing \"joints\" object"))?;
        let mut joints = [None; NUM_JOINTS];
        for (name, jv) in jobj {
            let j = Joint::from_name(name).ok_or_else(|| PoseError::Parse(format!("unknown joint {name:?}")))?;
            if jv.is_null() {
                continue;
            }
            let coord = |k: &str| -> Result<f64, PoseError> {
                jv.get(k)
                    .and_then(Value::as_f64)
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| PoseError::Parse(format!("joint {name}: invalid {k:?}")))
            };
            let occluded = match jv.get("occluded") {
                None | Some(Value::Null) => false,
                Some(b) => b
                    .as_bool()
                    .ok_or_else(|| PoseError::Parse(format!("joint {name}: invalid \"occluded\"")))?,
            };
            joints[j.index()] = Some(JointObservation {
                x: coord("x")?,
                y: coord("y")?,
                occluded,
            });
        }
        Ok(PoseAnnotation {
            frame,
            person_id,
            activity,
            torso_rotation,
            joints,
            source,
        })
    }
}

/// Parses JSON-lines annotations, one record per (frame, person).
///
/// A literal `NaN` (or any other non-JSON number) is a parse error, as is a
/// coordinate that is not a finite number.
pub fn parse_annotations(text: &str, bounds: Option<(usize, usize)>) -> Result<Vec<PoseAnnotation>, PoseError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: Value =
            serde_json::from_str(line).map_err(|e| PoseError::Parse(format!("line {}: {e}", lineno + 1)))?;
        let ann = PoseAnnotation::from_json(&v).map_err(|e| match e {
            PoseError::Parse(m) => PoseError::Parse(format!("line {}: {m}", lineno + 1)),
            other => other,
        })?;
        ann.validate(bounds)?;
        out.push(ann);
    }
    Ok(out)
}

pub fn load_annotations(path: &Path, bounds: Option<(usize, usize)>) -> Result<Vec<PoseAnnotation>, PoseError> {
    let file = std::fs::File::open(path)?;
    let mut text = String::new();
    for line in std::io::BufReader::new(file).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_annotations(&text, bounds)
}

pub fn write_annotations(path: &Path, anns: &[PoseAnnotation]) -> Result<(), PoseError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for a in anns {
        writeln!(w, "{}", a.to_json())?;
    }
    w.flush()?;
    Ok(())
}

/// Simulates an imperfect pose estimator: Gaussian jitter of `sigma` px on
/// every joint, independent dropout with probability `dropout`, and
/// truncation of joints pushed outside the frame. Output is tagged
/// [`PoseSource::Ps`].
pub fn inject_noise(
    anns: &[PoseAnnotation],
    sigma: f64,
    dropout: f64,
    width: usize,
    height: usize,
    seed: u64,
) -> Vec<PoseAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("valid sigma");
    anns.iter()
        .map(|a| {
            let mut out = a.clone();
            out.source = PoseSource::Ps;
            for slot in out.joints.iter_mut() {
                let dx = normal.sample(&mut rng);
                let dy = normal.sample(&mut rng);
                let drop = rng.random::<f64>() < dropout;
                if let Some(o) = slot {
                    let (x, y) = (o.x + dx, o.y + dy);
                    if drop || x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
                        *slot = None;
                    } else {
                        o.x = x;
                        o.y = y;
                    }
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_record() -> String {
        let joints: Vec<String> = Joint::ALL
            .iter()
            .enumerate()
            .map(|(i, j)| format!("\"{}\":{{\"x\":{},\"y\":{},\"occluded\":false}}", j.name(), 10 + i, 20 + i))
            .collect();
        format!(
            "{{\"frame\":3,\"person_id\":0,\"activity\":2,\"torso_rotation\":{{\"yaw\":10,\"pitch\":0,\"roll\":0}},\"joints\":{{{}}}}}",
            joints.join(",")
        )
    }

    #[test]
    fn fully_visible_record() {
        let anns = parse_annotations(&full_record(), Some((64, 64))).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].occluded_count(), 0);
        assert_eq!(anns[0].truncated_count(), 0);
        assert_eq!(anns[0].joint(Joint::Neck), Some((11.0, 21.0)));
    }

    #[test]
    fn absent_wrists_count_as_truncated() {
        let rec = full_record()
            .replace("\"r_wrist\":{\"x\":14,\"y\":24,\"occluded\":false}", "\"r_wrist\":null")
            .replace("\"l_wrist\":{\"x\":17,\"y\":27,\"occluded\":false}", "\"l_wrist\":null");
        let anns = parse_annotations(&rec, None).unwrap();
        assert_eq!(anns[0].truncated_count(), 2);
        assert!(anns[0].joint(Joint::RWrist).is_none());
    }

    #[test]
    fn nan_is_parse_error() {
        let rec = full_record().replace("\"x\":10,", "\"x\":NaN,");
        assert!(matches!(parse_annotations(&rec, None), Err(PoseError::Parse(_))));
        let rec = full_record().replace("\"x\":10,", "\"x\":\"NaN\",");
        assert!(matches!(parse_annotations(&rec, None), Err(PoseError::Parse(_))));
    }

    #[test]
    fn out_of_bounds_joint_rejected() {
        assert!(matches!(
            parse_annotations(&full_record(), Some((16, 16))),
            Err(PoseError::InvariantViolation(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let anns = parse_annotations(&full_record(), None).unwrap();
        let text = anns.iter().map(|a| a.to_json().to_string()).collect::<Vec<_>>().join("\n");
        assert_eq!(parse_annotations(&text, None).unwrap(), anns);
    }

    #[test]
    fn noise_is_seeded_and_marks_source() {
        let anns = parse_annotations(&full_record(), None).unwrap();
        let a = inject_noise(&anns, 1.0, 0.2, 64, 64, 9);
        let b = inject_noise(&anns, 1.0, 0.2, 64, 64, 9);
        assert_eq!(a, b);
        assert_eq!(a[0].source, PoseSource::Ps);
        let none = inject_noise(&anns, 0.0, 0.0, 64, 64, 9);
        assert_eq!(none[0].joints, anns[0].joints);
    }
}
