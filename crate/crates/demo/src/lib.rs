//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each operation renders a small synthetic clip, runs one pipeline stage
//! on it and hands flat numeric arrays back to JavaScript for drawing.

use trajfuse::flow::{self, estimate_global_motion, FlowParams};
use trajfuse::learning::{chi2_feature_map, chi2_kernel, FeatureMapParams};
use trajfuse::media::{generate_synthetic_clip, Motif, SyntheticClip, SyntheticSpec};
use trajfuse::trajectories::{compute_clip_flows, estimate_global_motions, prune_reason, track_points_with_flows, DtConfig};
use wasm_bindgen::prelude::*;

const SIDE: usize = 64;

fn render(motif: Motif, seed: u64, frames: usize, params: &[(&str, f64)]) -> Result<SyntheticClip, String> {
    let mut spec = SyntheticSpec::new(motif, seed).with_size(SIDE, SIDE, frames);
    for (k, v) in params {
        spec = spec.with_param(k, *v);
    }
    generate_synthetic_clip(&spec).map_err(|e| e.to_string())
}

fn motif_by_name(name: &str) -> Result<Motif, String> {
    Motif::ALL
        .into_iter()
        .find(|m| m.name() == name)
        .ok_or_else(|| format!("unknown motif {name:?}"))
}

/// Flow between two frames of a textured pan.
#[wasm_bindgen]
pub struct FlowDemo {
    frame: Vec<u8>,
    uv: Vec<f32>,
    mean: (f64, f64),
    epe: f64,
    global: (f64, f64),
}

#[wasm_bindgen]
impl FlowDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(dx: f64, dy: f64, seed: u32) -> Result<FlowDemo, JsError> {
        run_flow(dx, dy, seed as u64).map_err(|e| JsError::new(&e))
    }

    pub fn side(&self) -> usize {
        SIDE
    }

    /// First frame as 8-bit gray, row major.
    pub fn frame(&self) -> Vec<u8> {
        self.frame.clone()
    }

    /// Interleaved `u, v` per pixel.
    pub fn flow(&self) -> Vec<f32> {
        self.uv.clone()
    }

    pub fn mean_u(&self) -> f64 {
        self.mean.0
    }

    pub fn mean_v(&self) -> f64 {
        self.mean.1
    }

    /// Interior mean endpoint error against the true shift.
    pub fn epe(&self) -> f64 {
        self.epe
    }

    pub fn global_tx(&self) -> f64 {
        self.global.0
    }

    pub fn global_ty(&self) -> f64 {
        self.global.1
    }
}

pub fn run_flow(dx: f64, dy: f64, seed: u64) -> Result<FlowDemo, String> {
    let s = render(Motif::TranslatingBlob, seed, 2, &[("radius", 0.0), ("pan_x", dx), ("pan_y", dy)])?;
    let f = flow::compute_flow_with(s.clip.frame(0), s.clip.frame(1), &FlowParams::default()).map_err(|e| e.to_string())?;
    let g = estimate_global_motion(&f).map_err(|e| e.to_string())?;
    let uv = f.u.iter().zip(&f.v).flat_map(|(u, v)| [*u, *v]).collect();
    Ok(FlowDemo {
        frame: s.clip.frame(0).to_gray8(),
        uv,
        mean: f.interior_mean(8),
        epe: f.interior_epe((dx, dy), 8),
        global: g.translation_part(),
    })
}

/// Dense trajectories on a short synthetic clip, before and after pruning.
#[wasm_bindgen]
pub struct TrackDemo {
    frame: Vec<u8>,
    tracks: Vec<f64>,
    raw: usize,
    kept: usize,
}

#[wasm_bindgen]
impl TrackDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(motif: &str, seed: u32, pan_x: f64, pan_y: f64) -> Result<TrackDemo, JsError> {
        run_tracks(motif, seed as u64, pan_x, pan_y).map_err(|e| JsError::new(&e))
    }

    pub fn side(&self) -> usize {
        SIDE
    }

    /// Last frame as 8-bit gray.
    pub fn frame(&self) -> Vec<u8> {
        self.frame.clone()
    }

    /// Per track: `kept` (0 or 1), then `x, y` for each of its points.
    pub fn tracks(&self) -> Vec<f64> {
        self.tracks.clone()
    }

    pub fn points_per_track(&self) -> usize {
        DtConfig::default().track_length + 1
    }

    pub fn raw_count(&self) -> usize {
        self.raw
    }

    pub fn kept_count(&self) -> usize {
        self.kept
    }
}

pub fn run_tracks(motif: &str, seed: u64, pan_x: f64, pan_y: f64) -> Result<TrackDemo, String> {
    let motif = motif_by_name(motif)?;
    let cfg = DtConfig::default();
    let frames = cfg.track_length + 5;
    let params: &[(&str, f64)] = match motif {
        Motif::TranslatingBlob => &[("pan_x", pan_x), ("pan_y", pan_y)],
        _ => &[],
    };
    let s = render(motif, seed, frames, params)?;
    let flows = compute_clip_flows(&s.clip, &cfg).map_err(|e| e.to_string())?;
    let global = estimate_global_motions(&flows);
    let raw = track_points_with_flows(&s.clip, &flows, &cfg).map_err(|e| e.to_string())?;
    let mut tracks = Vec::new();
    let mut kept = 0;
    for t in &raw {
        let keep = prune_reason(t, &global, &cfg).is_none();
        kept += keep as usize;
        tracks.push(if keep { 1.0 } else { 0.0 });
        for p in &t.points {
            tracks.extend([p.0, p.1]);
        }
    }
    Ok(TrackDemo {
        frame: s.clip.frame(frames - 1).to_gray8(),
        tracks,
        raw: raw.len(),
        kept,
    })
}

/// Exact and approximated chi-squared kernel `k(x, y)` for `x` on a grid
/// of `steps + 1` points in `[0, 1]`, interleaved as `x, exact, approx`.
#[wasm_bindgen]
pub fn chi2_curve(order_n: usize, period: f64, y: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    chi2_points(order_n, period, y, steps).map_err(|e| JsError::new(&e))
}

pub fn chi2_points(order_n: usize, period: f64, y: f64, steps: usize) -> Result<Vec<f64>, String> {
    if !(period > 0.0) || steps == 0 {
        return Err("period must be positive and steps at least 1".into());
    }
    let p = FeatureMapParams {
        order_n,
        sampling_period: period,
    };
    let my = chi2_feature_map(&[y], &p).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(3 * (steps + 1));
    for i in 0..=steps {
        let x = i as f64 / steps as f64;
        let mx = chi2_feature_map(&[x], &p).map_err(|e| e.to_string())?;
        let approx: f64 = mx.iter().zip(&my).map(|(a, b)| a * b).sum();
        out.extend([x, chi2_kernel(&[x], &[y]), approx]);
    }
    Ok(out)
}
