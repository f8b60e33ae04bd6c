//! Articulated stick-figure kinematics used by the synthetic motifs.

use serde::{Deserialize, Serialize};

use crate::pose::{Joint, NUM_JOINTS};

/// Parameters of one stick figure. Angles are in degrees, `period` in frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigureParams {
    /// Hip-centre position at frame 0.
    pub hip_x: f64,
    pub hip_y: f64,
    /// Neck-to-hip-centre distance in pixels.
    pub scale: f64,
    /// Upper-arm angle away from the downward vertical at rest.
    pub arm_base: f64,
    pub arm_amp: f64,
    /// Forearm bend relative to the upper arm at rest; elbow inner angle is `180 - bend`.
    pub bend_base: f64,
    pub forearm_amp: f64,
    pub leg_amp: f64,
    pub period: f64,
    /// Oscillation phase in radians.
    pub phase: f64,
    /// Torso yaw; only foreshortens shoulder and hip widths.
    pub yaw: f64,
    /// Horizontal hip drift in px/frame.
    pub drift_x: f64,
}

impl FigureParams {
    pub fn centered(width: usize, height: usize) -> Self {
        FigureParams {
            hip_x: width as f64 / 2.0,
            hip_y: height as f64 * 0.58,
            scale: height as f64 * 0.26,
            arm_base: 20.0,
            arm_amp: 40.0,
            bend_base: 30.0,
            forearm_amp: 30.0,
            leg_amp: 15.0,
            period: 16.0,
            phase: 0.0,
            yaw: 0.0,
            drift_x: 0.0,
        }
    }

    /// Oscillation value `sin(2πt/period + phase)` driving every limb.
    pub fn swing(&self, t: f64) -> f64 {
        (std::f64::consts::TAU * t / self.period + self.phase).sin()
    }

    pub fn limb_thickness(&self) -> f64 {
        (0.16 * self.scale).max(3.0)
    }

    pub fn head_radius(&self) -> f64 {
        0.2 * self.scale
    }
}

fn dir(angle_deg: f64, side: f64) -> (f64, f64) {
    let a = angle_deg.to_radians();
    (side * a.sin(), a.cos())
}

fn add(p: (f64, f64), d: (f64, f64), len: f64) -> (f64, f64) {
    (p.0 + d.0 * len, p.1 + d.1 * len)
}

/// Joint positions at (possibly fractional) frame time `t`, indexed by
/// [`Joint::index`]. Image y grows downwards.
pub fn figure_joints(p: &FigureParams, t: f64) -> [(f64, f64); NUM_JOINTS] {
    let s = p.swing(t);
    let squash = p.yaw.to_radians().cos().abs().max(0.15);
    let hip = (p.hip_x + p.drift_x * t, p.hip_y);
    let neck = (hip.0, hip.1 - p.scale);
    let head = (neck.0, neck.1 - 0.4 * p.scale);
    let sw = 0.35 * p.scale * squash;
    let hw = 0.2 * p.scale * squash;
    let upper_arm = 0.5 * p.scale;
    let forearm = 0.45 * p.scale;
    let thigh = 0.55 * p.scale;
    let shin = 0.5 * p.scale;

    let arm = p.arm_base + p.arm_amp * s;
    let bend = p.bend_base + p.forearm_amp * s;
    let leg = p.leg_amp * s;
    let knee = 0.3 * leg.abs();

    let mut out = [(0.0, 0.0); NUM_JOINTS];
    out[Joint::Head.index()] = head;
    out[Joint::Neck.index()] = neck;
    for (side, sh_j, el_j, wr_j, hip_j, kn_j, an_j, leg_sign) in [
        (
            -1.0,
            Joint::RShoulder,
            Joint::RElbow,
            Joint::RWrist,
            Joint::RHip,
            Joint::RKnee,
            Joint::RAnkle,
            1.0,
        ),
        (
            1.0,
            Joint::LShoulder,
            Joint::LElbow,
            Joint::LWrist,
            Joint::LHip,
            Joint::LKnee,
            Joint::LAnkle,
            -1.0,
        ),
    ] {
        let shoulder = (neck.0 + side * sw, neck.1 + 0.05 * p.scale);
        let elbow = add(shoulder, dir(arm, side), upper_arm);
        let wrist = add(elbow, dir(arm + bend, side), forearm);
        let h = (hip.0 + side * hw, hip.1);
        let phi = leg_sign * leg;
        let k = add(h, dir(phi, 1.0), thigh);
        let a = add(k, dir(phi - knee, 1.0), shin);
        out[sh_j.index()] = shoulder;
        out[el_j.index()] = elbow;
        out[wr_j.index()] = wrist;
        out[hip_j.index()] = h;
        out[kn_j.index()] = k;
        out[an_j.index()] = a;
    }
    out
}

/// Rendered bone segments as joint pairs; the spine runs from the neck to
/// the hip centre, which is not itself a joint.
pub(crate) fn figure_segments(j: &[(f64, f64); NUM_JOINTS]) -> Vec<((f64, f64), (f64, f64))> {
    use Joint::*;
    let g = |a: Joint| j[a.index()];
    let hip_c = ((g(RHip).0 + g(LHip).0) / 2.0, (g(RHip).1 + g(LHip).1) / 2.0);
    vec![
        (g(Head), g(Neck)),
        (g(Neck), g(RShoulder)),
        (g(Neck), g(LShoulder)),
        (g(RShoulder), g(RElbow)),
        (g(RElbow), g(RWrist)),
        (g(LShoulder), g(LElbow)),
        (g(LElbow), g(LWrist)),
        (g(Neck), hip_c),
        (g(RHip), g(LHip)),
        (g(RHip), g(RKnee)),
        (g(RKnee), g(RAnkle)),
        (g(LHip), g(LKnee)),
        (g(LKnee), g(LAnkle)),
    ]
}

pub(crate) fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}
