//! Deterministic synthetic benchmarks: colored agents translating along
//! lanes, with injected anomalies (novel object class, abnormal speed,
//! abnormal direction) and exact analytic flow fields.
//!
//! Everything is a pure function of the script seeds: trajectories use
//! integer rendering (floor after a half-pixel offset) and flows are the
//! displacement of the rendered centers, so warping a frame's masks by its
//! flow reproduces the next frame exactly.

use crate::dataset::{
    write_flo, write_frame_png, write_labels, write_palette, Split,
};
use crate::flow::FlowField;
use crate::frame::{colorize, ClassPalette};
use ndarray::Array2;
use rand::RngExt as _;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("output root {0} is not empty (use force to overwrite)")]
    RootNotEmpty(PathBuf),
    #[error("script {script}: {detail}")]
    BadScript { script: String, detail: String },
    #[error("clip {clip} frame {frame}: agents overlap at pixel ({y}, {x})")]
    Overlap {
        clip: String,
        frame: usize,
        y: usize,
        x: usize,
    },
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Speed multiplier applied by the fast-motion anomaly.
pub const FAST_MOTION_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Disk,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    East,
    West,
    North,
    South,
}

impl Heading {
    fn velocity(self, speed: f64) -> (f64, f64) {
        match self {
            Heading::East => (speed, 0.0),
            Heading::West => (-speed, 0.0),
            Heading::North => (0.0, -speed),
            Heading::South => (0.0, speed),
        }
    }

    fn is_horizontal(self) -> bool {
        matches!(self, Heading::East | Heading::West)
    }
}

/// What happens when an agent reaches the frame boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingPolicy {
    /// Reflect off the walls, reversing the motion axis.
    Bounce,
    /// Toroidal wrap: leave one side, re-enter the other. Keeps every
    /// lane's direction constant, so position determines heading.
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    NovelClass,
    FastMotion,
    WrongDirection,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::NovelClass => "novel_class",
            AnomalyKind::FastMotion => "fast_motion",
            AnomalyKind::WrongDirection => "wrong_direction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub onset_frame: usize,
    pub agent_index: usize,
}

/// One scripted agent. `lane` indexes the fixed lane grid; horizontal
/// headings ride row lanes, vertical headings ride column lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub class_id: u8,
    pub shape: Shape,
    pub size_px: usize,
    pub speed_px_per_frame: f64,
    pub heading: Heading,
    pub lane: usize,
}

/// A homogeneous group of clips: same agent roster and anomaly, per-clip
/// seeded phases along the lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub split: Split,
    pub group_id: String,
    pub seed: u64,
    pub num_clips: usize,
    pub frames_per_clip: usize,
    pub image_size: usize,
    pub policy: HeadingPolicy,
    pub agents: Vec<AgentSpec>,
    pub anomaly: Option<AnomalySpec>,
}

impl SceneScript {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |detail: String| SynthError::BadScript {
            script: self.group_id.clone(),
            detail,
        };
        if self.agents.is_empty() {
            return Err(fail("no agents".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.speed_px_per_frame <= 0.0 {
                return Err(fail(format!(
                    "agent {i} speed {} must be > 0",
                    a.speed_px_per_frame
                )));
            }
            if a.size_px == 0 || a.size_px >= self.image_size {
                return Err(fail(format!("agent {i} size {} out of range", a.size_px)));
            }
        }
        if let Some(anomaly) = &self.anomaly {
            if self.split == Split::Train {
                return Err(fail("train scripts must not carry an anomaly".into()));
            }
            if anomaly.onset_frame >= self.frames_per_clip {
                return Err(fail(format!(
                    "onset {} outside clip of {} frames",
                    anomaly.onset_frame, self.frames_per_clip
                )));
            }
            if anomaly.agent_index >= self.agents.len() {
                return Err(fail(format!(
                    "anomalous agent index {} out of range",
                    anomaly.agent_index
                )));
            }
        }
        Ok(())
    }

    fn anomaly_of_kind(&self, kind: AnomalyKind) -> Option<&AnomalySpec> {
        self.anomaly.as_ref().filter(|a| a.kind == kind)
    }
}

/// Rendered footprint of one agent at one frame.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub class_id: u8,
    pub shape: Shape,
    pub size_px: usize,
    /// Rendered integer center (after half-pixel-offset flooring).
    pub center: (i64, i64),
    /// Whether the agent is visible this frame.
    pub active: bool,
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Pixels covered by an agent, as (y, x) pairs; wraps toroidally when
/// `wrap` is set, otherwise clipped to the canvas.
fn agent_mask(state: &AgentState, size: usize, wrap: bool) -> Vec<(usize, usize)> {
    if !state.active {
        return Vec::new();
    }
    let (cx, cy) = state.center;
    let half = state.size_px as i64 / 2;
    let r2 = half * half;
    let mut px = Vec::new();
    for dy in -half..=half {
        for dx in -half..=half {
            let inside = match state.shape {
                Shape::Disk => dx * dx + dy * dy <= r2,
                Shape::Square => true,
            };
            if !inside {
                continue;
            }
            let (mut x, mut y) = (cx + dx, cy + dy);
            if wrap {
                x = x.rem_euclid(size as i64);
                y = y.rem_euclid(size as i64);
            } else if x < 0 || y < 0 || x >= size as i64 || y >= size as i64 {
                continue;
            }
            px.push((y as usize, x as usize));
        }
    }
    px
}

/// Exact flow between two consecutive frames: each pixel covered by an
/// agent at `t` carries that agent's center displacement; background is
/// zero. Agents must not overlap at `t`.
pub fn analytic_flow(
    states_t: &[AgentState],
    states_next: &[AgentState],
    size: usize,
    policy: HeadingPolicy,
) -> Result<FlowField, SynthError> {
    let wrap = policy == HeadingPolicy::Wrap;
    let mut u = Array2::<f32>::zeros((size, size));
    let mut v = Array2::<f32>::zeros((size, size));
    let mut taken = Array2::<bool>::from_elem((size, size), false);
    for (a, b) in states_t.iter().zip(states_next.iter()) {
        if !a.active {
            continue;
        }
        let (mut du, mut dv) = if b.active {
            (b.center.0 - a.center.0, b.center.1 - a.center.1)
        } else {
            (0, 0)
        };
        if wrap {
            // Minimal displacement on the torus.
            let s = size as i64;
            du = (du + s / 2).rem_euclid(s) - s / 2;
            dv = (dv + s / 2).rem_euclid(s) - s / 2;
        }
        for (y, x) in agent_mask(a, size, wrap) {
            if taken[(y, x)] {
                return Err(SynthError::Overlap {
                    clip: String::new(),
                    frame: 0,
                    y,
                    x,
                });
            }
            taken[(y, x)] = true;
            u[(y, x)] = du as f32;
            v[(y, x)] = dv as f32;
        }
    }
    Ok(FlowField { u, v })
}

/// Per-frame simulated positions for every agent of one clip.
pub fn simulate_clip(script: &SceneScript, clip_ordinal: usize) -> Vec<Vec<AgentState>> {
    let size = script.image_size as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(
        script
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(clip_ordinal as u64),
    );
    let lane_coords = lane_positions(script.image_size);
    struct Sim {
        pos: (f64, f64),
        vel: (f64, f64),
        active_from: usize,
    }
    let mut sims: Vec<Sim> = Vec::with_capacity(script.agents.len());
    for (i, agent) in script.agents.iter().enumerate() {
        let lane_coord = lane_coords[agent.lane % lane_coords.len()] as f64;
        let phase: f64 = rng.random_range(0.0..size);
        let half = agent.size_px as f64 / 2.0;
        let phase = match script.policy {
            HeadingPolicy::Wrap => phase,
            HeadingPolicy::Bounce => half + phase % (size - 2.0 * half).max(1.0),
        };
        let pos = if agent.heading.is_horizontal() {
            (phase, lane_coord)
        } else {
            (lane_coord, phase)
        };
        let novel = script
            .anomaly_of_kind(AnomalyKind::NovelClass)
            .filter(|a| a.agent_index == i);
        sims.push(Sim {
            pos,
            vel: agent.heading.velocity(agent.speed_px_per_frame),
            active_from: novel.map(|a| a.onset_frame).unwrap_or(0),
        });
    }
    let mut frames = Vec::with_capacity(script.frames_per_clip);
    for f in 0..script.frames_per_clip {
        if f > 0 {
            for (i, sim) in sims.iter_mut().enumerate() {
                let agent = &script.agents[i];
                let mut vel = sim.vel;
                if let Some(anomaly) = &script.anomaly {
                    if anomaly.agent_index == i && f >= anomaly.onset_frame {
                        match anomaly.kind {
                            AnomalyKind::FastMotion => {
                                vel = (vel.0 * FAST_MOTION_FACTOR, vel.1 * FAST_MOTION_FACTOR);
                            }
                            AnomalyKind::WrongDirection => {
                                vel = (-vel.0, -vel.1);
                            }
                            AnomalyKind::NovelClass => {}
                        }
                    }
                }
                let half = agent.size_px as f64 / 2.0;
                let mut next = (sim.pos.0 + vel.0, sim.pos.1 + vel.1);
                match script.policy {
                    HeadingPolicy::Wrap => {
                        let s = script.image_size as f64;
                        next.0 = next.0.rem_euclid(s);
                        next.1 = next.1.rem_euclid(s);
                    }
                    HeadingPolicy::Bounce => {
                        let max = script.image_size as f64 - 1.0 - half;
                        // Reverse the base velocity on wall contact; the
                        // anomaly modifier still applies on later frames.
                        if next.0 < half || next.0 > max {
                            sim.vel.0 = -sim.vel.0;
                            let v0 = if let Some(a) = &script.anomaly {
                                if a.agent_index == i
                                    && f >= a.onset_frame
                                    && a.kind == AnomalyKind::FastMotion
                                {
                                    sim.vel.0 * FAST_MOTION_FACTOR
                                } else if a.agent_index == i
                                    && f >= a.onset_frame
                                    && a.kind == AnomalyKind::WrongDirection
                                {
                                    -sim.vel.0
                                } else {
                                    sim.vel.0
                                }
                            } else {
                                sim.vel.0
                            };
                            next.0 = (sim.pos.0 + v0).clamp(half, max);
                        }
                        if next.1 < half || next.1 > max {
                            sim.vel.1 = -sim.vel.1;
                            let v1 = if let Some(a) = &script.anomaly {
                                if a.agent_index == i
                                    && f >= a.onset_frame
                                    && a.kind == AnomalyKind::FastMotion
                                {
                                    sim.vel.1 * FAST_MOTION_FACTOR
                                } else if a.agent_index == i
                                    && f >= a.onset_frame
                                    && a.kind == AnomalyKind::WrongDirection
                                {
                                    -sim.vel.1
                                } else {
                                    sim.vel.1
                                }
                            } else {
                                sim.vel.1
                            };
                            next.1 = (sim.pos.1 + v1).clamp(half, max);
                        }
                    }
                }
                sim.pos = next;
            }
        }
        let states: Vec<AgentState> = sims
            .iter()
            .zip(script.agents.iter())
            .map(|(sim, agent)| AgentState {
                class_id: agent.class_id,
                shape: agent.shape,
                size_px: agent.size_px,
                center: (round_half_up(sim.pos.0), round_half_up(sim.pos.1)),
                active: f >= sim.active_from,
            })
            .collect();
        frames.push(states);
    }
    frames
}

/// Paint agent class ids onto a background-zero grid, failing on overlap.
pub fn render_class_map(
    states: &[AgentState],
    size: usize,
    policy: HeadingPolicy,
    clip: &str,
    frame: usize,
) -> Result<Array2<u8>, SynthError> {
    let wrap = policy == HeadingPolicy::Wrap;
    let mut grid = Array2::<u8>::zeros((size, size));
    for state in states {
        for (y, x) in agent_mask(state, size, wrap) {
            if grid[(y, x)] != 0 {
                return Err(SynthError::Overlap {
                    clip: clip.to_string(),
                    frame,
                    y,
                    x,
                });
            }
            grid[(y, x)] = state.class_id;
        }
    }
    Ok(grid)
}

fn labels_for(script: &SceneScript) -> Vec<u8> {
    let mut labels = vec![0u8; script.frames_per_clip];
    if let Some(anomaly) = &script.anomaly {
        for l in labels.iter_mut().skip(anomaly.onset_frame) {
            *l = 1;
        }
    }
    labels
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalyRange {
    pub kind: String,
    pub onset: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clip_id: String,
    pub split: String,
    pub num_frames: usize,
    pub anomaly: Option<AnomalyRange>,
    pub files_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub image_size: usize,
    pub train_clips: usize,
    pub test_clips: usize,
    pub total_frames: usize,
    pub clips: Vec<ClipManifest>,
    pub tree_sha256: String,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| SynthError::BadScript {
            script: path.display().to_string(),
            detail: e.to_string(),
        })
    }
}

fn hash_files(paths: &[PathBuf], root: &Path) -> Result<String, SynthError> {
    let mut hasher = Sha256::new();
    let mut sorted: Vec<&PathBuf> = paths.iter().collect();
    sorted.sort();
    for path in sorted {
        let rel = path.strip_prefix(root).unwrap_or(path);
        hasher.update(rel.to_string_lossy().as_bytes());
        let bytes = fs::read(path).map_err(|source| SynthError::Io {
            path: path.clone(),
            source,
        })?;
        hasher.update(&bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Hash every file under `root` (sorted relative paths + contents).
pub fn hash_tree(root: &Path) -> Result<String, SynthError> {
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    hash_files(&files, root)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), SynthError> {
    for entry in fs::read_dir(dir).map_err(|source| SynthError::Io {
        path: dir.to_path_buf(),
        source,
    })? {
        let entry = entry.map_err(|source| SynthError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset generation

/// Render every clip of every script into the dataset layout under `root`
/// and write `manifest.json`. The root must be empty or absent unless
/// `force` is set. Fully determined by the script seeds.
pub fn gen_dataset(
    scripts: &[SceneScript],
    palette: &ClassPalette,
    root: &Path,
    force: bool,
) -> Result<Manifest, SynthError> {
    if root.exists() {
        let occupied = fs::read_dir(root)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if occupied {
            if !force {
                return Err(SynthError::RootNotEmpty(root.to_path_buf()));
            }
            fs::remove_dir_all(root).map_err(|source| SynthError::Io {
                path: root.to_path_buf(),
                source,
            })?;
        }
    }
    for script in scripts {
        script.validate()?;
    }
    // Novel classes must be absent from every train-split roster.
    let train_classes: std::collections::BTreeSet<u8> = scripts
        .iter()
        .filter(|s| s.split == Split::Train)
        .flat_map(|s| s.agents.iter().map(|a| a.class_id))
        .collect();
    for script in scripts {
        if let Some(anomaly) = script.anomaly_of_kind(AnomalyKind::NovelClass) {
            let cls = script.agents[anomaly.agent_index].class_id;
            if train_classes.contains(&cls) {
                return Err(SynthError::BadScript {
                    script: script.group_id.clone(),
                    detail: format!("novel class {cls} appears in a train roster"),
                });
            }
        }
    }
    fs::create_dir_all(root).map_err(|source| SynthError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    write_palette(&root.join("palette.json"), palette)?;
    let mut clips = Vec::new();
    let mut total_frames = 0usize;
    let (mut train_clips, mut test_clips) = (0usize, 0usize);
    for script in scripts {
        for ordinal in 0..script.num_clips {
            let clip_id = format!("{}_{ordinal:03}", script.group_id);
            let clip_dir = root.join(script.split.as_str()).join(&clip_id);
            fs::create_dir_all(clip_dir.join("semantic")).map_err(|source| SynthError::Io {
                path: clip_dir.clone(),
                source,
            })?;
            fs::create_dir_all(clip_dir.join("flow")).map_err(|source| SynthError::Io {
                path: clip_dir.clone(),
                source,
            })?;
            let states = simulate_clip(script, ordinal);
            let mut files = Vec::new();
            for (f, frame_states) in states.iter().enumerate() {
                let class_map = render_class_map(
                    frame_states,
                    script.image_size,
                    script.policy,
                    &clip_id,
                    f,
                )?;
                let frame = colorize(&class_map, palette, f)?;
                let path = clip_dir.join("semantic").join(format!("{f:06}.png"));
                write_frame_png(&path, &frame)?;
                files.push(path);
            }
            for f in 0..states.len() - 1 {
                let flow =
                    analytic_flow(&states[f], &states[f + 1], script.image_size, script.policy)
                        .map_err(|e| match e {
                            SynthError::Overlap { y, x, .. } => SynthError::Overlap {
                                clip: clip_id.clone(),
                                frame: f,
                                y,
                                x,
                            },
                            other => other,
                        })?;
                let path = clip_dir.join("flow").join(format!("{f:06}.flo"));
                write_flo(&path, &flow)?;
                files.push(path);
            }
            let labels = labels_for(script);
            if script.split == Split::Test {
                let path = clip_dir.join("labels.csv");
                write_labels(&path, &labels)?;
                files.push(path);
            }
            match script.split {
                Split::Train => train_clips += 1,
                Split::Test => test_clips += 1,
            }
            total_frames += script.frames_per_clip;
            clips.push(ClipManifest {
                clip_id,
                split: script.split.as_str().to_string(),
                num_frames: script.frames_per_clip,
                anomaly: script.anomaly.as_ref().map(|a| AnomalyRange {
                    kind: a.kind.as_str().to_string(),
                    onset: a.onset_frame,
                    end: script.frames_per_clip,
                }),
                files_sha256: hash_files(&files, root)?,
            });
        }
    }
    let tree_sha256 = hash_tree(root)?;
    let manifest = Manifest {
        image_size: scripts.first().map(|s| s.image_size).unwrap_or(0),
        train_clips,
        test_clips,
        total_frames,
        clips,
        tree_sha256,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(root.join("manifest.json"), text).map_err(|source| SynthError::Io {
        path: root.join("manifest.json"),
        source,
    })?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Default benchmark

/// Fixed lane coordinates: four evenly spaced rows (or columns).
pub fn lane_positions(image_size: usize) -> [usize; 4] {
    let q = image_size / 8;
    [q, 3 * q, 5 * q, 7 * q]
}

fn roster(headings: [Heading; 4], lanes: usize) -> Vec<AgentSpec> {
    // person: green disk; car: blue square; bicycle: yellow disk.
    let specs = [
        (1u8, Shape::Disk, 9usize),
        (3, Shape::Square, 11),
        (2, Shape::Disk, 7),
        (1, Shape::Disk, 9),
    ];
    (0..lanes)
        .map(|lane| AgentSpec {
            class_id: specs[lane].0,
            shape: specs[lane].1,
            size_px: specs[lane].2,
            speed_px_per_frame: 1.0,
            heading: headings[lane],
            lane,
        })
        .collect()
}

const HORIZONTAL: [Heading; 4] = [Heading::East, Heading::West, Heading::East, Heading::West];
const VERTICAL: [Heading; 4] = [Heading::South, Heading::North, Heading::South, Heading::North];

/// The default desk-scale benchmark: 64 training clips (40 frames each)
/// and 16 test clips (8 normal, 4 novel-class, 2 fast-motion at 3x speed,
/// 2 reversed-heading).
pub fn default_benchmark(
    seed: u64,
    image_size: usize,
    policy: HeadingPolicy,
) -> Vec<SceneScript> {
    let base = |group_id: &str, split, seed_off: u64, num_clips, headings: [Heading; 4], lanes| {
        SceneScript {
            split,
            group_id: group_id.to_string(),
            seed: seed.wrapping_add(seed_off),
            num_clips,
            frames_per_clip: 40,
            image_size,
            policy,
            agents: roster(headings, lanes),
            anomaly: None,
        }
    };
    let mut scripts = vec![
        base("train_h3", Split::Train, 1, 16, HORIZONTAL, 3),
        base("train_h4", Split::Train, 2, 16, HORIZONTAL, 4),
        base("train_v3", Split::Train, 3, 16, VERTICAL, 3),
        base("train_v4", Split::Train, 4, 16, VERTICAL, 4),
        base("normal_h", Split::Test, 5, 4, HORIZONTAL, 4),
        base("normal_v", Split::Test, 6, 4, VERTICAL, 4),
    ];
    // Novel object: an unseen red disk rides lane 3 with in-lane motion,
    // appearing mid-clip.
    let mut novel = base("novel", Split::Test, 7, 4, HORIZONTAL, 4);
    novel.agents[3] = AgentSpec {
        class_id: 7,
        shape: Shape::Disk,
        size_px: 9,
        speed_px_per_frame: 1.0,
        heading: HORIZONTAL[3],
        lane: 3,
    };
    novel.anomaly = Some(AnomalySpec {
        kind: AnomalyKind::NovelClass,
        onset_frame: 14,
        agent_index: 3,
    });
    scripts.push(novel);
    let mut fast = base("fast", Split::Test, 8, 2, HORIZONTAL, 4);
    fast.anomaly = Some(AnomalySpec {
        kind: AnomalyKind::FastMotion,
        onset_frame: 12,
        agent_index: 1,
    });
    scripts.push(fast);
    let mut wrong = base("wrong", Split::Test, 9, 2, HORIZONTAL, 4);
    wrong.anomaly = Some(AnomalySpec {
        kind: AnomalyKind::WrongDirection,
        onset_frame: 18,
        agent_index: 0,
    });
    scripts.push(wrong);
    scripts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_dataset, Split};
    use tempfile::TempDir;

    fn tiny_script(anomaly: Option<AnomalySpec>) -> SceneScript {
        SceneScript {
            split: if anomaly.is_some() {
                Split::Test
            } else {
                Split::Train
            },
            group_id: "t".into(),
            seed: 5,
            num_clips: 1,
            frames_per_clip: 40,
            image_size: 32,
            policy: HeadingPolicy::Wrap,
            agents: vec![
                AgentSpec {
                    class_id: 1,
                    shape: Shape::Disk,
                    size_px: 5,
                    speed_px_per_frame: 1.0,
                    heading: Heading::East,
                    lane: 0,
                },
                AgentSpec {
                    class_id: 3,
                    shape: Shape::Square,
                    size_px: 5,
                    speed_px_per_frame: 1.0,
                    heading: Heading::West,
                    lane: 1,
                },
            ],
            anomaly,
        }
    }

    #[test]
    fn no_anomaly_means_all_zero_labels() {
        let script = tiny_script(None);
        assert_eq!(labels_for(&script), vec![0u8; 40]);
    }

    #[test]
    fn onset_marks_every_frame_from_onset_on() {
        let script = tiny_script(Some(AnomalySpec {
            kind: AnomalyKind::FastMotion,
            onset_frame: 20,
            agent_index: 0,
        }));
        let labels = labels_for(&script);
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 20);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 20);
        assert_eq!(labels[19], 0);
        assert_eq!(labels[20], 1);
    }

    #[test]
    fn analytic_flow_of_translating_disk() {
        let at = |cx: i64, active: bool| AgentState {
            class_id: 1,
            shape: Shape::Disk,
            size_px: 5,
            center: (cx, 8),
            active,
        };
        let flow =
            analytic_flow(&[at(6, true)], &[at(8, true)], 16, HeadingPolicy::Bounce).unwrap();
        // +2 horizontal inside the disk, 0 outside.
        assert_eq!(flow.u[(8, 6)], 2.0);
        assert_eq!(flow.v[(8, 6)], 0.0);
        assert_eq!(flow.u[(8, 8)], 2.0);
        assert_eq!(flow.u[(0, 0)], 0.0);
        let moving: usize = flow.u.iter().filter(|&&u| u != 0.0).count();
        assert_eq!(moving, 21); // disk of radius 2: 21 pixels
    }

    #[test]
    fn analytic_flow_of_static_agent_is_zero() {
        let s = AgentState {
            class_id: 1,
            shape: Shape::Square,
            size_px: 3,
            center: (5, 5),
            active: true,
        };
        let flow =
            analytic_flow(&[s.clone()], &[s], 16, HeadingPolicy::Bounce).unwrap();
        assert!(flow.u.iter().all(|&u| u == 0.0));
        assert!(flow.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn analytic_flow_two_agents_piecewise() {
        // Oracle: build the expected field directly from the two masks.
        let a0 = AgentState {
            class_id: 1,
            shape: Shape::Square,
            size_px: 3,
            center: (3, 3),
            active: true,
        };
        let a1 = AgentState {
            center: (4, 3),
            ..a0.clone()
        };
        let b0 = AgentState {
            class_id: 3,
            shape: Shape::Square,
            size_px: 3,
            center: (10, 10),
            active: true,
        };
        let b1 = AgentState {
            center: (10, 11),
            ..b0.clone()
        };
        let flow = analytic_flow(
            &[a0.clone(), b0.clone()],
            &[a1, b1],
            16,
            HeadingPolicy::Bounce,
        )
        .unwrap();
        let mut expect_u = Array2::<f32>::zeros((16, 16));
        let mut expect_v = Array2::<f32>::zeros((16, 16));
        for (y, x) in agent_mask(&a0, 16, false) {
            expect_u[(y, x)] = 1.0;
        }
        for (y, x) in agent_mask(&b0, 16, false) {
            expect_v[(y, x)] = 1.0;
        }
        assert_eq!(flow.u, expect_u);
        assert_eq!(flow.v, expect_v);
    }

    #[test]
    fn overlapping_agents_error() {
        let a = AgentState {
            class_id: 1,
            shape: Shape::Square,
            size_px: 5,
            center: (5, 5),
            active: true,
        };
        let b = AgentState {
            class_id: 3,
            center: (6, 6),
            ..a.clone()
        };
        assert!(matches!(
            analytic_flow(&[a.clone(), b.clone()], &[a, b], 16, HeadingPolicy::Bounce),
            Err(SynthError::Overlap { .. })
        ));
    }

    #[test]
    fn same_seed_twice_gives_byte_identical_trees() {
        let dir_a = TempDir::new().unwrap();
        let dir_b = TempDir::new().unwrap();
        let palette = ClassPalette::default_palette();
        let scripts = vec![tiny_script(None)];
        let ma = gen_dataset(&scripts, &palette, &dir_a.path().join("d"), false).unwrap();
        let mb = gen_dataset(&scripts, &palette, &dir_b.path().join("d"), false).unwrap();
        assert_eq!(ma.tree_sha256, mb.tree_sha256);
        assert_eq!(
            hash_tree(&dir_a.path().join("d")).unwrap(),
            hash_tree(&dir_b.path().join("d")).unwrap()
        );
    }

    #[test]
    fn refuses_non_empty_root_without_force() {
        let dir = TempDir::new().unwrap();
        let root = dir.path().join("d");
        fs::create_dir_all(&root).unwrap();
        fs::write(root.join("existing.txt"), "x").unwrap();
        let palette = ClassPalette::default_palette();
        let scripts = vec![tiny_script(None)];
        assert!(matches!(
            gen_dataset(&scripts, &palette, &root, false),
            Err(SynthError::RootNotEmpty(_))
        ));
        // Force overwrites.
        gen_dataset(&scripts, &palette, &root, true).unwrap();
    }

    #[test]
    fn generated_tree_loads_and_round_trips() {
        let dir = TempDir::new().unwrap();
        let root = dir.path().join("d");
        let palette = ClassPalette::default_palette();
        let scripts = vec![
            tiny_script(None),
            tiny_script(Some(AnomalySpec {
                kind: AnomalyKind::FastMotion,
                onset_frame: 10,
                agent_index: 0,
            })),
        ];
        let manifest = gen_dataset(&scripts, &palette, &root, false).unwrap();
        assert_eq!(manifest.train_clips, 1);
        assert_eq!(manifest.test_clips, 1);
        // The manifest's tree hash matches an independent re-hash,
        // and both splits load cleanly at the native size.
        assert_eq!(manifest.tree_sha256, hash_tree(&root).unwrap());
        let train = load_dataset(&root, Split::Train, 32).unwrap();
        assert_eq!(train.clips.len(), 1);
        assert_eq!(train.clips[0].num_frames(), 40);
        assert_eq!(train.clips[0].flows.len(), 39);
        let test = load_dataset(&root, Split::Test, 32).unwrap();
        let labels = test.clips[0].labels.as_ref().unwrap();
        assert_eq!(labels[9], 0);
        assert_eq!(labels[10], 1);
    }

    /// Warping an agent's mask by the frame's flow reproduces its mask in
    /// the next frame (toroidal arithmetic under Wrap).
    #[test]
    fn flow_warp_reproduces_next_frame_masks() {
        for policy in [HeadingPolicy::Wrap, HeadingPolicy::Bounce] {
            let mut script = tiny_script(None);
            script.policy = policy;
            let states = simulate_clip(&script, 0);
            let size = script.image_size;
            for f in 0..states.len() - 1 {
                let flow = analytic_flow(&states[f], &states[f + 1], size, policy).unwrap();
                for (a, b) in states[f].iter().zip(states[f + 1].iter()) {
                    if !a.active || !b.active {
                        continue;
                    }
                    let mask_now = agent_mask(a, size, policy == HeadingPolicy::Wrap);
                    let mut mask_next = agent_mask(b, size, policy == HeadingPolicy::Wrap);
                    mask_next.sort_unstable();
                    let mut warped: Vec<(usize, usize)> = mask_now
                        .iter()
                        .map(|&(y, x)| {
                            let du = flow.u[(y, x)] as i64;
                            let dv = flow.v[(y, x)] as i64;
                            let nx = (x as i64 + du).rem_euclid(size as i64) as usize;
                            let ny = (y as i64 + dv).rem_euclid(size as i64) as usize;
                            (ny, nx)
                        })
                        .collect();
                    warped.sort_unstable();
                    warped.dedup();
                    if policy == HeadingPolicy::Wrap {
                        assert_eq!(warped, mask_next, "policy {policy:?} frame {f}");
                    } else {
                        // Clipped rendering can shrink edge masks; warped
                        // pixels must still land inside the next mask.
                        for p in &warped {
                            assert!(
                                mask_next.contains(p) || {
                                    // pixel clipped out next frame
                                    false
                                },
                                "pixel {p:?} missing at frame {f}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn default_benchmark_counts() {
        let scripts = default_benchmark(7, 64, HeadingPolicy::Wrap);
        let train: usize = scripts
            .iter()
            .filter(|s| s.split == Split::Train)
            .map(|s| s.num_clips)
            .sum();
        let test: usize = scripts
            .iter()
            .filter(|s| s.split == Split::Test)
            .map(|s| s.num_clips)
            .sum();
        assert_eq!(train, 64);
        assert_eq!(test, 16);
        // Train scripts never carry an anomaly.
        for s in &scripts {
            if s.split == Split::Train {
                assert!(s.anomaly.is_none());
            }
            s.validate().unwrap();
        }
        // Novel class id is absent from all train rosters.
        let train_classes: Vec<u8> = scripts
            .iter()
            .filter(|s| s.split == Split::Train)
            .flat_map(|s| s.agents.iter().map(|a| a.class_id))
            .collect();
        assert!(!train_classes.contains(&7));
    }
}
