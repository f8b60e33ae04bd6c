//! Deterministic synthetic clips standing in for real video snippets.
//!
//! Every motif is rendered from continuous functions of `(x, y, t)`, so a
//! motif's true motion is known exactly. Pixel values are quantised to
//! multiples of 1/255 so clips survive an 8-bit PGM round trip unchanged.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::figure::{figure_joints, figure_segments, segment_distance, FigureParams};
use super::{Frame, MediaError, VideoClip};
use crate::pose::{JointObservation, PoseAnnotation, PoseSource, TorsoRotation, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motif {
    TranslatingBlob,
    OscillatingLimbFigure,
    RotatingTexture,
    StaticTextured,
    TwoFigureScene,
}

impl Motif {
    pub const ALL: [Motif; 5] = [
        Motif::TranslatingBlob,
        Motif::OscillatingLimbFigure,
        Motif::RotatingTexture,
        Motif::StaticTextured,
        Motif::TwoFigureScene,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Motif::TranslatingBlob => "translating-blob",
            Motif::OscillatingLimbFigure => "oscillating-limb-figure",
            Motif::RotatingTexture => "rotating-texture",
            Motif::StaticTextured => "static-textured",
            Motif::TwoFigureScene => "two-figure-scene",
        }
    }

    fn allowed_params(self) -> &'static [&'static str] {
        const FIGURE: &[&str] = &[
            "bg_contrast",
            "hip_x",
            "hip_y",
            "scale",
            "arm_base",
            "arm_amp",
            "bend_base",
            "forearm_amp",
            "leg_amp",
            "period",
            "phase",
            "yaw",
            "drift_x",
        ];
        match self {
            Motif::TranslatingBlob => &[
                "vx",
                "vy",
                "radius",
                "x0",
                "y0",
                "pan_x",
                "pan_y",
                "bg_contrast",
                "fg_contrast",
            ],
            Motif::RotatingTexture => &["omega", "radius", "bg_contrast", "fg_contrast"],
            Motif::StaticTextured => &["bg_contrast"],
            Motif::OscillatingLimbFigure => FIGURE,
            Motif::TwoFigureScene => &[
                "bg_contrast",
                "hip_y",
                "scale",
                "arm_base",
                "arm_amp",
                "bend_base",
                "forearm_amp",
                "leg_amp",
                "period",
                "phase",
                "yaw",
                "spacing",
                "phase2",
                "arm_amp2",
            ],
        }
    }
}

/// A synthetic clip request, typically read from JSON:
///
/// ```json
/// {"motif": "translating-blob", "width": 64, "height": 64, "frames": 45,
///  "seed": 7, "params": {"vx": 2, "vy": 1}}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub motif: Motif,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

fn default_side() -> usize {
    64
}

fn default_frames() -> usize {
    45
}

impl SyntheticSpec {
    pub fn new(motif: Motif, seed: u64) -> Self {
        SyntheticSpec {
            motif,
            width: default_side(),
            height: default_side(),
            frames: default_frames(),
            seed,
            params: BTreeMap::new(),
        }
    }

    pub fn with_size(mut self, width: usize, height: usize, frames: usize) -> Self {
        self.width = width;
        self.height = height;
        self.frames = frames;
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    fn validate(&self) -> Result<(), MediaError> {
        let bad = |msg: String| Err(MediaError::InvalidSpec(msg));
        if !(16..=1024).contains(&self.width) || !(16..=1024).contains(&self.height) {
            return bad(format!("frame size {}x{} outside 16..=1024", self.width, self.height));
        }
        if self.frames < 2 {
            return bad("at least 2 frames required".into());
        }
        let allowed = self.motif.allowed_params();
        for (k, v) in &self.params {
            if !allowed.contains(&k.as_str()) {
                return bad(format!("unknown parameter {k:?} for motif {}", self.motif.name()));
            }
            if !v.is_finite() {
                return bad(format!("parameter {k} is not finite"));
            }
        }
        let in_range = |k: &str, lo: f64, hi: f64| -> Result<(), MediaError> {
            match self.params.get(k) {
                Some(v) if *v < lo || *v > hi => Err(MediaError::InvalidSpec(format!("{k}={v} outside [{lo}, {hi}]"))),
                _ => Ok(()),
            }
        };
        for k in ["vx", "vy", "pan_x", "pan_y"] {
            in_range(k, -8.0, 8.0)?;
        }
        in_range("bg_contrast", 0.0, 0.5)?;
        in_range("fg_contrast", 0.0, 0.5)?;
        in_range("omega", -0.3, 0.3)?;
        in_range("radius", 0.0, self.width.max(self.height) as f64)?;
        in_range("scale", 4.0, self.height as f64)?;
        in_range("period", 2.0, 1e6)?;
        in_range("yaw", -180.0, 180.0)?;
        in_range("drift_x", -8.0, 8.0)?;
        Ok(())
    }
}

/// Generator output: the clip, per-frame joint annotations for motifs that
/// contain figures, and the moving-object support per frame.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub clip: VideoClip,
    pub poses: Vec<PoseAnnotation>,
    /// Per-frame mask of independently moving object pixels; empty when the
    /// motif has no such object.
    pub object_masks: Vec<Vec<bool>>,
    /// Background translation in px/frame.
    pub pan: (f64, f64),
}

/// Smooth band-limited value noise, continuous in `(x, y)`.
#[derive(Debug, Clone, Copy)]
pub struct Texture {
    pub seed: u64,
    pub base: f64,
    pub contrast: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1656_67B1) ^ (iy as u64).wrapping_mul(0x27D4_EB2F_1656_67C5)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoother(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let gx = x / cell;
    let gy = y / cell;
    let ix = gx.floor();
    let iy = gy.floor();
    let fx = smoother(gx - ix);
    let fy = smoother(gy - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * fx;
    let bot = c + (d - c) * fx;
    top + (bot - top) * fy
}

impl Texture {
    pub fn new(seed: u64, base: f64, contrast: f64) -> Self {
        Texture { seed, base, contrast }
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let n = 0.6 * (value_noise(self.seed, x, y, 9.0) - 0.5) + 0.4 * (value_noise(self.seed ^ 0xA5A5, x, y, 4.5) - 0.5);
        (self.base + 2.0 * self.contrast * n).clamp(0.0, 1.0)
    }
}

fn quantize(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

/// A textured frame whose content is shifted by `offset` px relative to
/// `offset = (0, 0)`: `pixel(x, y) = texture(x - dx, y - dy)`.
pub fn textured_frame(width: usize, height: usize, seed: u64, offset: (f64, f64)) -> Frame {
    let tex = Texture::new(seed, 0.5, 0.35);
    Frame::from_fn(width, height, |x, y| quantize(tex.sample(x as f64 - offset.0, y as f64 - offset.1)))
}

fn coverage(edge_distance: f64) -> f64 {
    (0.5 - edge_distance).clamp(0.0, 1.0)
}

struct FigureRender {
    joints: [(f64, f64); NUM_JOINTS],
    segments: Vec<((f64, f64), (f64, f64))>,
    thickness: f64,
    head_radius: f64,
}

impl FigureRender {
    fn new(p: &FigureParams, t: f64) -> Self {
        let joints = figure_joints(p, t);
        FigureRender {
            segments: figure_segments(&joints),
            joints,
            thickness: p.limb_thickness(),
            head_radius: p.head_radius(),
        }
    }

    /// Limb coverage and joint-disc coverage at a pixel.
    fn cover(&self, px: (f64, f64)) -> (f64, f64) {
        let mut limb: f64 = 0.0;
        for (a, b) in &self.segments {
            let d = segment_distance(px, *a, *b) - self.thickness / 2.0;
            limb = limb.max(coverage(d));
        }
        let head = self.joints[crate::pose::Joint::Head.index()];
        limb = limb.max(coverage((px.0 - head.0).hypot(px.1 - head.1) - self.head_radius));
        let mut joint: f64 = 0.0;
        let jr = 0.75 * self.thickness;
        for j in &self.joints {
            joint = joint.max(coverage((px.0 - j.0).hypot(px.1 - j.1) - jr));
        }
        (limb, joint)
    }

    fn covers(&self, px: (f64, f64)) -> bool {
        let (limb, joint) = self.cover(px);
        limb.max(joint) >= 0.5
    }
}

fn annotate(
    render: &FigureRender,
    frame: usize,
    person_id: u32,
    yaw: f64,
    width: usize,
    height: usize,
    occluders: &[&FigureRender],
) -> PoseAnnotation {
    let mut joints = [None; NUM_JOINTS];
    for (slot, &(x, y)) in joints.iter_mut().zip(render.joints.iter()) {
        if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
            continue;
        }
        let occluded = occluders.iter().any(|o| o.covers((x, y)));
        *slot = Some(JointObservation { x, y, occluded });
    }
    PoseAnnotation {
        frame,
        person_id,
        activity: 0,
        torso_rotation: Some(TorsoRotation {
            yaw,
            pitch: Some(0.0),
            roll: Some(0.0),
        }),
        joints,
        source: PoseSource::Gt,
    }
}

fn figure_params(spec: &SyntheticSpec) -> FigureParams {
    let d = FigureParams::centered(spec.width, spec.height);
    FigureParams {
        hip_x: spec.param("hip_x", d.hip_x),
        hip_y: spec.param("hip_y", d.hip_y),
        scale: spec.param("scale", d.scale),
        arm_base: spec.param("arm_base", d.arm_base),
        arm_amp: spec.param("arm_amp", d.arm_amp),
        bend_base: spec.param("bend_base", d.bend_base),
        forearm_amp: spec.param("forearm_amp", d.forearm_amp),
        leg_amp: spec.param("leg_amp", d.leg_amp),
        period: spec.param("period", d.period),
        phase: spec.param("phase", d.phase),
        yaw: spec.param("yaw", d.yaw),
        drift_x: spec.param("drift_x", d.drift_x),
    }
}

/// Renders a clip from `spec`. Identical specs give bit-identical output.
/// Clips shorter than the pipeline minimum are allowed here; the loader
/// enforces the limit.
pub fn generate_synthetic_clip(spec: &SyntheticSpec) -> Result<SyntheticClip, MediaError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (wf, hf) = (w as f64, h as f64);
    let bg = Texture::new(spec.seed, 0.4, spec.param("bg_contrast", 0.25));
    let fg = Texture::new(spec.seed.wrapping_add(0x5EED), 0.62, spec.param("fg_contrast", 0.3));
    let mut frames = Vec::with_capacity(spec.frames);
    let mut poses = Vec::new();
    let mut masks = Vec::new();
    let mut pan = (0.0, 0.0);

    match spec.motif {
        Motif::StaticTextured => {
            let f = Frame::from_fn(w, h, |x, y| quantize(bg.sample(x as f64, y as f64)));
            frames = vec![f; spec.frames];
        }
        Motif::TranslatingBlob => {
            let v = (spec.param("vx", 2.0), spec.param("vy", 1.0));
            pan = (spec.param("pan_x", 0.0), spec.param("pan_y", 0.0));
            let r = spec.param("radius", 0.2 * wf.min(hf));
            let mid = (spec.frames - 1) as f64 / 2.0;
            let c0 = (spec.param("x0", wf / 2.0 - v.0 * mid), spec.param("y0", hf / 2.0 - v.1 * mid));
            for t in 0..spec.frames {
                let tf = t as f64;
                let c = (c0.0 + v.0 * tf, c0.1 + v.1 * tf);
                let mut mask = vec![false; w * h];
                let frame = Frame::from_fn(w, h, |x, y| {
                    let (xf, yf) = (x as f64, y as f64);
                    let b = bg.sample(xf - pan.0 * tf, yf - pan.1 * tf);
                    if r <= 0.0 {
                        return quantize(b);
                    }
                    let d = (xf - c.0).hypot(yf - c.1);
                    mask[y * w + x] = d < r;
                    let cov = coverage(d - r);
                    quantize(b * (1.0 - cov) + fg.sample(xf - c.0, yf - c.1) * cov)
                });
                frames.push(frame);
                if r > 0.0 {
                    masks.push(mask);
                }
            }
        }
        Motif::RotatingTexture => {
            let omega = spec.param("omega", 0.05);
            let r = spec.param("radius", 0.4 * wf.min(hf));
            let c = ((wf - 1.0) / 2.0, (hf - 1.0) / 2.0);
            for t in 0..spec.frames {
                let a = -omega * t as f64;
                let (sa, ca) = a.sin_cos();
                let mut mask = vec![false; w * h];
                let frame = Frame::from_fn(w, h, |x, y| {
                    let (dx, dy) = (x as f64 - c.0, y as f64 - c.1);
                    let d = dx.hypot(dy);
                    mask[y * w + x] = d < r;
                    let cov = coverage(d - r);
                    let (rx, ry) = (ca * dx - sa * dy, sa * dx + ca * dy);
                    quantize(bg.sample(x as f64, y as f64) * (1.0 - cov) + fg.sample(rx, ry) * cov)
                });
                frames.push(frame);
                masks.push(mask);
            }
        }
        Motif::OscillatingLimbFigure | Motif::TwoFigureScene => {
            let bg = Texture::new(spec.seed, 0.3, spec.param("bg_contrast", 0.12));
            let mut people = Vec::new();
            if spec.motif == Motif::OscillatingLimbFigure {
                people.push(figure_params(spec));
            } else {
                let mut base = figure_params(spec);
                if !spec.params.contains_key("scale") {
                    base.scale = 0.22 * hf;
                }
                let spacing = spec.param("spacing", 0.42 * wf);
                let mut a = base;
                a.hip_x = wf / 2.0 - spacing / 2.0;
                let mut b = base;
                b.hip_x = wf / 2.0 + spacing / 2.0;
                b.phase += spec.param("phase2", PI / 2.0);
                b.arm_amp = spec.param("arm_amp2", base.arm_amp);
                people.push(a);
                people.push(b);
            }
            for t in 0..spec.frames {
                let tf = t as f64;
                let renders: Vec<FigureRender> = people.iter().map(|p| FigureRender::new(p, tf)).collect();
                let mut mask = vec![false; w * h];
                let frame = Frame::from_fn(w, h, |x, y| {
                    let px = (x as f64, y as f64);
                    let mut v = bg.sample(px.0, px.1);
                    for r in &renders {
                        let (limb, joint) = r.cover(px);
                        v = v * (1.0 - limb) + 0.8 * limb;
                        v = v * (1.0 - joint) + 1.0 * joint;
                        if limb.max(joint) >= 0.5 {
                            mask[y * w + x] = true;
                        }
                    }
                    quantize(v)
                });
                frames.push(frame);
                masks.push(mask);
                for (i, (r, p)) in renders.iter().zip(&people).enumerate() {
                    let later: Vec<&FigureRender> = renders[i + 1..].iter().collect();
                    poses.push(annotate(r, t, i as u32, p.yaw, w, h, &later));
                }
            }
        }
    }

    Ok(SyntheticClip {
        clip: VideoClip::new(frames, true)?,
        poses,
        object_masks: masks,
        pan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{load_frame_sequence, write_frame_sequence};

    #[test]
    fn static_motif_has_no_motion() {
        let s = generate_synthetic_clip(&SyntheticSpec::new(Motif::StaticTextured, 3)).unwrap();
        let f0 = s.clip.frame(0);
        assert!(s.clip.frames().iter().all(|f| f == f0));
        assert!(s.poses.is_empty());
    }

    #[test]
    fn equal_spec_equal_clip() {
        for m in Motif::ALL {
            let spec = SyntheticSpec::new(m, 11).with_size(32, 32, 6);
            let a = generate_synthetic_clip(&spec).unwrap();
            let b = generate_synthetic_clip(&spec).unwrap();
            assert_eq!(a.clip, b.clip, "{}", m.name());
            assert_eq!(a.poses, b.poses);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic_clip(&SyntheticSpec::new(Motif::StaticTextured, 1)).unwrap();
        let b = generate_synthetic_clip(&SyntheticSpec::new(Motif::StaticTextured, 2)).unwrap();
        assert_ne!(a.clip.frame(0), b.clip.frame(0));
    }

    #[test]
    fn pgm_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::new(Motif::OscillatingLimbFigure, 5);
        let s = generate_synthetic_clip(&spec).unwrap();
        write_frame_sequence(&s.clip, dir.path()).unwrap();
        let back = load_frame_sequence(dir.path(), "frame_*.pgm", false).unwrap();
        assert_eq!(back, s.clip);
    }

    #[test]
    fn translating_blob_moves_by_velocity() {
        let spec = SyntheticSpec::new(Motif::TranslatingBlob, 7)
            .with_param("vx", 2.0)
            .with_param("vy", 1.0)
            .with_param("bg_contrast", 0.0);
        let s = generate_synthetic_clip(&spec).unwrap();
        assert_eq!(s.clip.frame_count(), 45);
        // the blob interior at frame t+1 equals frame t shifted by (2, 1)
        let (f0, f1) = (s.clip.frame(20), s.clip.frame(21));
        let m0 = &s.object_masks[20];
        let mut checked = 0;
        for y in 2..60 {
            for x in 2..60 {
                if m0[y * 64 + x] && m0[(y - 1) * 64 + x - 2] && m0[(y + 1) * 64 + x + 2] {
                    assert_eq!(f1.get(x + 2, y + 1), f0.get(x, y));
                    checked += 1;
                }
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn figure_motif_returns_fourteen_joints_per_frame() {
        let spec = SyntheticSpec::new(Motif::OscillatingLimbFigure, 11);
        let s = generate_synthetic_clip(&spec).unwrap();
        assert_eq!(s.poses.len(), 45);
        let p = figure_params(&spec);
        for ann in &s.poses {
            let truth = figure_joints(&p, ann.frame as f64);
            for (obs, t) in ann.joints.iter().zip(truth.iter()) {
                let o = obs.expect("figure fully inside frame");
                assert_eq!((o.x, o.y), *t);
            }
        }
    }

    #[test]
    fn two_figures_two_people() {
        let s = generate_synthetic_clip(&SyntheticSpec::new(Motif::TwoFigureScene, 2)).unwrap();
        let ids: std::collections::BTreeSet<u32> = s.poses.iter().map(|p| p.person_id).collect();
        assert_eq!(ids.len(), 2);
    }

    #[test]
    fn rejects_bad_params() {
        let too_fast = SyntheticSpec::new(Motif::TranslatingBlob, 0).with_param("vx", 9.0);
        assert!(matches!(generate_synthetic_clip(&too_fast), Err(MediaError::InvalidSpec(_))));
        let unknown = SyntheticSpec::new(Motif::StaticTextured, 0).with_param("vx", 1.0);
        assert!(generate_synthetic_clip(&unknown).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let json = r#"{"motif":"translating-blob","seed":7,"params":{"vx":2,"vy":1}}"#;
        let spec: SyntheticSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.width, 64);
        assert_eq!(spec.frames, 45);
        assert_eq!(spec.params["vx"], 2.0);
    }
}
