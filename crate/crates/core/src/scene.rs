//! Synthetic room simulator: multipath channel responses for two receive
//! antennas plus the matching top-down camera frame.
//!
//! Every propagation path is a single bounce (or the direct line of sight).
//! A path of total length `L` bouncing off a reflector with gain `ρ` has
//! delay `L / c` and complex gain `(ρ / L) · exp(-j 2π f_c τ)`. The channel at
//! subcarrier `k` is the path sum evaluated at `f_c + m_k Δf`, with
//! `m_k ∈ {-28..-1, 1..28}`.

use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csi::{pack_csi, PairedSample};
use crate::dataset::{save_dataset, Dataset};
use crate::error::{Error, Result};
use crate::frame::{BoundingBox, Color, Frame, FRAME_HEIGHT, FRAME_WIDTH};
use crate::SimRng;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const N_SUBCARRIERS: usize = 56;

/// Occupied subcarrier offsets of a 20 MHz OFDM channel, DC excluded.
pub fn subcarrier_indices() -> [i32; N_SUBCARRIERS] {
    let mut out = [0; N_SUBCARRIERS];
    for (slot, m) in out.iter_mut().zip((-28..0).chain(1..=28)) {
        *slot = m;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: [f64; 2],
    /// Reflection gain in `[0, 1]`.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<[f64; 2]>,
    /// Metres per second.
    pub speed: f64,
    /// Closed paths loop back to the first waypoint; open paths are walked
    /// back and forth.
    #[serde(default = "default_true")]
    pub closed: bool,
}

fn default_true() -> bool {
    true
}

/// Room geometry, radio parameters and actor motion. Lengths in metres,
/// frequencies in hertz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// `(width, depth)`.
    pub room_size: [f64; 2],
    pub tx_position: [f64; 2],
    pub rx_positions: Vec<[f64; 2]>,
    pub static_scatterers: Vec<Scatterer>,
    /// Actor footprint `(width, depth)`.
    pub actor_size: [f64; 2],
    #[serde(default = "default_actor_gain")]
    pub actor_reflection_gain: f64,
    pub carrier_frequency_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub trajectory: Trajectory,
    pub frame_rate_hz: f64,
    /// Standard deviation of the complex noise, `E|n|² = noise_std²`.
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default = "default_background")]
    pub background_color: Color,
    #[serde(default = "default_actor_color")]
    pub actor_color: Color,
}

fn default_actor_gain() -> f64 {
    1.0
}

pub fn default_background() -> Color {
    Color([51, 51, 64])
}

pub fn default_actor_color() -> Color {
    Color([242, 191, 77])
}

impl Default for SceneConfig {
    /// A 10 m × 5 m room with the transmitter at one end, two receive
    /// antennas at the other and an actor walking a fixed 18 m loop. One lap
    /// takes exactly 100 frames, so later laps revisit earlier poses.
    fn default() -> Self {
        SceneConfig {
            room_size: [10.0, 5.0],
            tx_position: [0.5, 2.5],
            rx_positions: vec![[9.5, 1.5], [9.5, 3.5]],
            static_scatterers: vec![
                Scatterer {
                    position: [3.0, 0.3],
                    gain: 0.5,
                },
                Scatterer {
                    position: [7.0, 4.7],
                    gain: 0.4,
                },
                Scatterer {
                    position: [9.7, 2.5],
                    gain: 0.3,
                },
            ],
            actor_size: [2.0, 1.6],
            actor_reflection_gain: default_actor_gain(),
            carrier_frequency_hz: 2.412e9,
            subcarrier_spacing_hz: 312.5e3,
            trajectory: Trajectory {
                waypoints: vec![[2.0, 1.0], [8.0, 1.0], [8.0, 4.0], [2.0, 4.0]],
                speed: 0.9,
                closed: true,
            },
            frame_rate_hz: 5.0,
            noise_std: 0.01,
            seed: 0,
            background_color: default_background(),
            actor_color: default_actor_color(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [w, d] = self.room_size;
        if !(w > 0.0 && d > 0.0 && w.is_finite() && d.is_finite()) {
            return bad(format!("room size must be positive, got {:?}", self.room_size));
        }
        if self.rx_positions.len() != 2 {
            return bad(format!("exactly 2 receive antennas required, got {}", self.rx_positions.len()));
        }
        let inside = |p: &[f64; 2]| (0.0..=w).contains(&p[0]) && (0.0..=d).contains(&p[1]);
        if !inside(&self.tx_position) {
            return bad(format!("transmitter {:?} outside the room", self.tx_position));
        }
        if let Some(p) = self.rx_positions.iter().find(|p| !inside(p)) {
            return bad(format!("receiver {p:?} outside the room"));
        }
        if let Some(p) = self.trajectory.waypoints.iter().find(|p| !inside(p)) {
            return bad(format!("trajectory waypoint {p:?} outside the room"));
        }
        if let Some(s) = self.static_scatterers.iter().find(|s| !(0.0..=1.0).contains(&s.gain)) {
            return bad(format!("scatterer gain {} outside [0, 1]", s.gain));
        }
        if !(self.carrier_frequency_hz > 0.0) || !(self.subcarrier_spacing_hz > 0.0) {
            return bad("carrier frequency and subcarrier spacing must be positive".into());
        }
        if !(self.frame_rate_hz > 0.0) {
            return bad("frame rate must be positive".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative".into());
        }
        if !(self.trajectory.speed >= 0.0) {
            return bad("trajectory speed must be non-negative".into());
        }
        if self.actor_size.iter().any(|v| !(*v > 0.0)) || !(self.actor_reflection_gain >= 0.0) {
            return bad("actor size must be positive and reflection gain non-negative".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SceneConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("scene config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Scene state at time `t` seconds.
    pub fn state_at(&self, time: f64) -> SceneState {
        let wp = &self.trajectory.waypoints;
        let position = match wp.len() {
            0 => None,
            1 => Some(wp[0]),
            _ => Some(walk(wp, self.trajectory.closed, self.trajectory.speed * time)),
        };
        SceneState {
            time,
            actor_position: position.unwrap_or([0.0, 0.0]),
            actor_present: position.is_some(),
        }
    }
}

fn walk(wp: &[[f64; 2]], closed: bool, distance: f64) -> [f64; 2] {
    let mut legs: Vec<([f64; 2], [f64; 2])> = wp.windows(2).map(|w| (w[0], w[1])).collect();
    if closed {
        legs.push((wp[wp.len() - 1], wp[0]));
    }
    let lens: Vec<f64> = legs.iter().map(|(a, b)| dist(a, b)).collect();
    let total: f64 = lens.iter().sum();
    if total == 0.0 {
        return wp[0];
    }
    let mut s = if closed {
        distance.rem_euclid(total)
    } else {
        // Back and forth along the open path.
        let r = distance.rem_euclid(2.0 * total);
        if r > total {
            2.0 * total - r
        } else {
            r
        }
    };
    for ((a, b), len) in legs.iter().zip(&lens) {
        if s <= *len {
            let f = if *len > 0.0 { s / len } else { 0.0 };
            return [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f];
        }
        s -= len;
    }
    legs.last().unwrap().1
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub time: f64,
    pub actor_position: [f64; 2],
    pub actor_present: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    LineOfSight,
    Scatterer(usize),
    Actor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub kind: PathKind,
    /// Seconds.
    pub delay: f64,
    pub gain: Complex64,
}

/// `exp(-j 2π x)` with the integer part of `x` removed first.
fn phasor(cycles: f64) -> Complex64 {
    Complex64::from_polar(1.0, -std::f64::consts::TAU * cycles.fract())
}

fn bounce(config: &SceneConfig, kind: PathKind, length: f64, reflection: f64) -> PathComponent {
    let delay = length / SPEED_OF_LIGHT;
    PathComponent {
        kind,
        delay,
        gain: phasor(config.carrier_frequency_hz * delay) * (reflection / length),
    }
}

/// Line of sight, one bounce per static scatterer and one off the actor.
pub fn enumerate_paths(config: &SceneConfig, state: &SceneState, antenna: usize) -> Vec<PathComponent> {
    assert!(antenna < 2, "antenna index must be 0 or 1");
    let tx = &config.tx_position;
    let rx = &config.rx_positions[antenna];
    let mut paths = Vec::with_capacity(config.static_scatterers.len() + 2);
    paths.push(bounce(config, PathKind::LineOfSight, dist(tx, rx), 1.0));
    for (i, s) in config.static_scatterers.iter().enumerate() {
        let len = dist(tx, &s.position) + dist(&s.position, rx);
        paths.push(bounce(config, PathKind::Scatterer(i), len, s.gain));
    }
    if state.actor_present {
        let p = &state.actor_position;
        let len = dist(tx, p) + dist(p, rx);
        paths.push(bounce(config, PathKind::Actor, len, config.actor_reflection_gain));
    }
    paths
}

/// Noise-free frequency response of a set of paths over the 56 subcarriers.
pub fn path_sum(config: &SceneConfig, paths: &[PathComponent]) -> Vec<Complex64> {
    subcarrier_indices()
        .iter()
        .map(|&m| {
            let f = config.carrier_frequency_hz + m as f64 * config.subcarrier_spacing_hz;
            paths.iter().map(|p| p.gain * phasor(f * p.delay)).sum()
        })
        .collect()
}

pub fn synthesize_channel(config: &SceneConfig, state: &SceneState, antenna: usize, rng: &mut SimRng) -> Vec<Complex64> {
    let mut h = path_sum(config, &enumerate_paths(config, state, antenna));
    if config.noise_std > 0.0 {
        let s = config.noise_std / std::f64::consts::SQRT_2;
        for v in h.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *v += Complex64::new(re * s, im * s);
        }
    }
    h
}

/// Room coordinates to pixel coordinates: `x` spans the 160 columns and
/// `y` the 120 rows.
pub fn room_to_pixel(config: &SceneConfig, p: [f64; 2]) -> [f64; 2] {
    [
        p[0] / config.room_size[0] * FRAME_WIDTH as f64,
        p[1] / config.room_size[1] * FRAME_HEIGHT as f64,
    ]
}

/// Ellipse centre and radii in pixels.
pub fn actor_ellipse(config: &SceneConfig, state: &SceneState) -> ([f64; 2], [f64; 2]) {
    let c = room_to_pixel(config, state.actor_position);
    let r = [
        config.actor_size[0] / config.room_size[0] * FRAME_WIDTH as f64 / 2.0,
        config.actor_size[1] / config.room_size[1] * FRAME_HEIGHT as f64 / 2.0,
    ];
    (c, r)
}

/// Pixels whose centre lies inside the ellipse.
pub fn ellipse_pixels(center: [f64; 2], radii: [f64; 2]) -> impl Iterator<Item = (usize, usize)> {
    let lo = |c: f64, r: f64| (c - r - 1.0).floor().max(0.0) as usize;
    let hi = |c: f64, r: f64, n: usize| ((c + r + 1.0).ceil().max(0.0) as usize).min(n);
    let (x0, x1) = (lo(center[0], radii[0]), hi(center[0], radii[0], FRAME_WIDTH));
    let (y0, y1) = (lo(center[1], radii[1]), hi(center[1], radii[1], FRAME_HEIGHT));
    (y0..y1).flat_map(move |y| {
        (x0..x1).filter_map(move |x| {
            let dx = (x as f64 + 0.5 - center[0]) / radii[0];
            let dy = (y as f64 + 0.5 - center[1]) / radii[1];
            (dx * dx + dy * dy <= 1.0).then_some((x, y))
        })
    })
}

pub fn render_frame(config: &SceneConfig, state: &SceneState) -> Frame {
    let mut frame = Frame::filled(config.background_color);
    if state.actor_present {
        let (c, r) = actor_ellipse(config, state);
        for (x, y) in ellipse_pixels(c, r) {
            frame.set(y, x, config.actor_color);
        }
    }
    frame
}

/// Tight box around the pixel set of a centre/radii ellipse.
pub fn ellipse_box(center: [f64; 2], radii: [f64; 2]) -> Option<BoundingBox> {
    let mut ext: Option<(usize, usize, usize, usize)> = None;
    for (x, y) in ellipse_pixels(center, radii) {
        ext = Some(match ext {
            None => (x, y, x, y),
            Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
        });
    }
    ext.map(|(x1, y1, x2, y2)| BoundingBox {
        x1: x1 as f64,
        y1: y1 as f64,
        x2: (x2 + 1) as f64,
        y2: (y2 + 1) as f64,
        confidence: 1.0,
    })
}

pub fn ground_truth_box(config: &SceneConfig, state: &SceneState) -> Option<BoundingBox> {
    if !state.actor_present {
        return None;
    }
    let (c, r) = actor_ellipse(config, state);
    ellipse_box(c, r)
}

/// Noise stream for one sample: keyed by `(seed, index)` so samples can be
/// produced in any order.
pub fn sample_rng(seed: u64, index: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn simulate_sample(config: &SceneConfig, index: u64) -> Result<PairedSample> {
    let time = index as f64 / config.frame_rate_hz;
    let state = config.state_at(time);
    let mut rng = sample_rng(config.seed, index);
    let a0 = synthesize_channel(config, &state, 0, &mut rng);
    let a1 = synthesize_channel(config, &state, 1, &mut rng);
    Ok(PairedSample {
        sample_id: index,
        timestamp: time,
        csi: pack_csi(&a0, &a1)?,
        frame: render_frame(config, &state),
        gt_boxes: ground_truth_box(config, &state).into_iter().collect(),
    })
}

pub fn simulate_samples(config: &SceneConfig, n_samples: usize) -> Result<Vec<PairedSample>> {
    config.validate()?;
    (0..n_samples as u64)
        .into_par_iter()
        .map(|i| simulate_sample(config, i))
        .collect()
}

/// Simulates `n_samples` consecutive frames and writes them as a dataset.
pub fn generate_dataset(config: &SceneConfig, n_samples: usize, out_dir: &Path) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    let samples = simulate_samples(config, n_samples)?;
    save_dataset(&samples, out_dir)?;
    Ok(Dataset::from_samples(out_dir.to_path_buf(), samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare_config() -> SceneConfig {
        SceneConfig {
            room_size: [10.0, 10.0],
            tx_position: [0.0, 0.0],
            rx_positions: vec![[3.0, 4.0], [6.0, 8.0]],
            static_scatterers: vec![],
            trajectory: Trajectory {
                waypoints: vec![],
                speed: 0.0,
                closed: true,
            },
            noise_std: 0.0,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn subcarriers_skip_dc() {
        let m = subcarrier_indices();
        assert_eq!(m.len(), 56);
        assert_eq!((m[0], m[27], m[28], m[55]), (-28, -1, 1, 28));
    }

    #[test]
    fn empty_scene_has_only_line_of_sight() {
        let cfg = bare_config();
        let state = cfg.state_at(0.0);
        assert!(!state.actor_present);
        let paths = enumerate_paths(&cfg, &state, 0);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].kind, PathKind::LineOfSight);
        // 3-4-5 triangle.
        assert!((paths[0].delay - 5.0 / SPEED_OF_LIGHT).abs() < 1e-20);
        assert!((paths[0].delay - 1.6678e-8).abs() < 1e-12);
        assert!((paths[0].gain.norm() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn line_of_sight_is_the_shortest_path() {
        let cfg = SceneConfig::default();
        let state = cfg.state_at(3.3);
        for a in 0..2 {
            let paths = enumerate_paths(&cfg, &state, a);
            let los = paths[0].delay;
            assert!(paths.iter().all(|p| p.delay >= los && p.delay >= 0.0));
            assert_eq!(paths.len(), cfg.static_scatterers.len() + 2);
        }
    }

    #[test]
    fn single_path_channel_is_a_pure_phasor() {
        let cfg = bare_config();
        let state = cfg.state_at(0.0);
        let path = enumerate_paths(&cfg, &state, 0)[0];
        let mut rng = sample_rng(0, 0);
        let h = synthesize_channel(&cfg, &state, 0, &mut rng);
        for (k, &m) in subcarrier_indices().iter().enumerate() {
            let f = cfg.carrier_frequency_hz + m as f64 * cfg.subcarrier_spacing_hz;
            let expect = path.gain * Complex64::from_polar(1.0, -std::f64::consts::TAU * f * path.delay);
            assert!((h[k] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn half_cycle_delay_offset_cancels() {
        let cfg = bare_config();
        let k = 10;
        let f = cfg.carrier_frequency_hz + subcarrier_indices()[k] as f64 * cfg.subcarrier_spacing_hz;
        let g = Complex64::new(0.1, 0.0);
        let t0 = 2e-8;
        let paths = [
            PathComponent {
                kind: PathKind::LineOfSight,
                delay: t0,
                gain: g,
            },
            PathComponent {
                kind: PathKind::Actor,
                delay: t0 + 1.0 / (2.0 * f),
                gain: g,
            },
        ];
        let h = path_sum(&cfg, &paths);
        assert!(h[k].norm() < 1e-9, "|H| = {}", h[k].norm());
    }

    #[test]
    fn actor_displacement_changes_actor_delay() {
        let mut cfg = bare_config();
        cfg.trajectory.waypoints = vec![[5.0, 5.0]];
        let a = cfg.state_at(0.0);
        let mut b = a;
        b.actor_position = [2.0, 7.0];
        let pa = enumerate_paths(&cfg, &a, 1);
        let pb = enumerate_paths(&cfg, &b, 1);
        assert_ne!(pa.last().unwrap().delay, pb.last().unwrap().delay);
    }

    #[test]
    fn quarter_width_maps_to_column_forty() {
        let mut cfg = SceneConfig::default();
        cfg.trajectory.waypoints = vec![[cfg.room_size[0] / 4.0, cfg.room_size[1] / 2.0]];
        let state = cfg.state_at(0.0);
        let (c, _) = actor_ellipse(&cfg, &state);
        assert!((c[0] - 40.0).abs() < 1e-9);
        let b = ground_truth_box(&cfg, &state).unwrap();
        assert!(((b.x1 + b.x2) / 2.0 - 40.0).abs() <= 0.5);
    }

    #[test]
    fn centred_actor_gives_centred_ellipse() {
        let mut cfg = SceneConfig::default();
        cfg.trajectory.waypoints = vec![[5.0, 2.5]];
        let state = cfg.state_at(0.0);
        let b = ground_truth_box(&cfg, &state).unwrap();
        assert_eq!((b.x1 + b.x2) / 2.0, 80.0);
        assert_eq!((b.y1 + b.y2) / 2.0, 60.0);
    }

    #[test]
    fn ellipse_extent_arithmetic() {
        let b = ellipse_box([80.0, 60.0], [10.0, 20.0]).unwrap();
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (70.0, 40.0, 90.0, 80.0));
    }

    #[test]
    fn absent_actor_renders_background_only() {
        let cfg = bare_config();
        let state = cfg.state_at(1.0);
        assert_eq!(render_frame(&cfg, &state), Frame::filled(cfg.background_color));
        assert!(ground_truth_box(&cfg, &state).is_none());
    }

    #[test]
    fn closed_loop_repeats_every_lap() {
        let cfg = SceneConfig::default();
        // 18 m loop at 0.9 m/s and 5 Hz: 100 frames per lap.
        let a = cfg.state_at(7.0 / 5.0);
        let b = cfg.state_at(107.0 / 5.0);
        assert!(dist(&a.actor_position, &b.actor_position) < 1e-9);
    }

    #[test]
    fn open_path_walks_back() {
        let traj = [[0.0, 0.0], [4.0, 0.0]];
        assert_eq!(walk(&traj, false, 5.0), [3.0, 0.0]);
        assert_eq!(walk(&traj, true, 5.0), [3.0, 0.0]);
        assert_eq!(walk(&traj, true, 9.0), [1.0, 0.0]);
    }

    #[test]
    fn validation_rejects_bad_geometry() {
        let mut cfg = SceneConfig::default();
        cfg.rx_positions.push([1.0, 1.0]);
        assert!(cfg.validate().is_err());
        let cfg = SceneConfig {
            tx_position: [11.0, 1.0],
            ..SceneConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SceneConfig {
            carrier_frequency_hz: 0.0,
            ..SceneConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SceneConfig::default().validate().is_ok());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = SceneConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(SceneConfig::from_json(&text).unwrap(), cfg);
    }
}
