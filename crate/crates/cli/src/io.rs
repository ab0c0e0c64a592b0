//! On-disk formats: episode directories, frames, action tables, checkpoints
//! and reports.
//!
//! An episode directory holds `states.csv`, `camera.json` (one camera, or an
//! array with one camera per row) and optionally `meta.json`. Floats in CSV
//! files are written with 17 significant digits; JSON uses the shortest
//! representation that parses back to the same value.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kvaf_core::episode::{ArmState, Episode, EpisodeMeta, RobotState};
use kvaf_core::kinematics::{parse_urdf, Arm, KinematicChain};
use kvaf_core::recovery::{ActionSequence, ACTION_COLUMNS};
use kvaf_core::render::KvafFrame;
use kvaf_core::{fixtures, CameraModel};
use kvaf_fusion::{FusionParams, ModelConfig};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const STATES_FILE: &str = "states.csv";
pub const CAMERA_FILE: &str = "camera.json";
pub const META_FILE: &str = "meta.json";

/// Loading fails beyond this quaternion norm error; smaller errors above the
/// episode tolerance are renormalized.
pub const QUAT_LOAD_TOLERANCE: f64 = 1e-3;
const QUAT_EPISODE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: row {row}, column `{column}`: {message}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{path}: row {row}: {message}")]
    Validation { path: PathBuf, row: usize, message: String },
}

type Result<T> = std::result::Result<T, IoError>;

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn schema(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Schema {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// 17 significant digits, which round-trips every `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(file_err(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    fs::write(path, bytes).map_err(file_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| schema(path, e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| schema(path, e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `builtin:bimanual`, `builtin:planar`, a URDF file or a chain JSON file.
/// Relative paths are resolved against `base`.
pub fn load_chain(spec: &str, base: &Path) -> anyhow::Result<KinematicChain> {
    let chain = match spec {
        "" | "builtin:bimanual" => parse_urdf(fixtures::BIMANUAL_URDF)?,
        "builtin:planar" => parse_urdf(fixtures::PLANAR_TWO_LINK_URDF)?,
        path => {
            let p = base.join(path);
            let text = read_text(&p)?;
            if p.extension().is_some_and(|e| e == "json") {
                KinematicChain::from_json(&text)?
            } else {
                parse_urdf(&text)?
            }
        }
    };
    Ok(chain)
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CameraFile {
    One(CameraModel),
    PerFrame(Vec<CameraModel>),
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraModel>> {
    Ok(match read_json::<CameraFile>(path)? {
        CameraFile::One(c) => vec![c],
        CameraFile::PerFrame(v) => v,
    })
}

fn header(dof: [usize; 2]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for (arm, n) in ["left", "right"].iter().zip(dof) {
        h.extend((0..n).map(|i| format!("q_{arm}_{i}")));
    }
    h.extend(["g_left".into(), "g_right".into()]);
    for arm in ["left", "right"] {
        h.extend(["x", "y", "z"].iter().map(|c| format!("p_{arm}_{c}")));
        h.extend(["w", "x", "y", "z"].iter().map(|c| format!("quat_{arm}_{c}")));
    }
    h
}

/// Reads and validates an episode directory (or its `states.csv`).
pub fn load_episode(path: &Path) -> Result<Episode> {
    let dir = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    };
    let csv_path = if path.is_dir() { dir.join(STATES_FILE) } else { path.to_path_buf() };
    let cam_path = dir.join(CAMERA_FILE);
    let cameras = load_cameras(&cam_path)?;
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        read_json(&meta_path)?
    } else {
        EpisodeMeta::default()
    };

    let file = File::open(&csv_path).map_err(file_err(&csv_path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| schema(&csv_path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let dof = [
        names.iter().filter(|n| n.starts_with("q_left_")).count(),
        names.iter().filter(|n| n.starts_with("q_right_")).count(),
    ];
    let expected = header(dof);
    if names != expected {
        let at = names
            .iter()
            .zip(&expected)
            .position(|(a, b)| a != b)
            .unwrap_or(names.len().min(expected.len()));
        return Err(schema(
            &csv_path,
            format!(
                "column {} is `{}`, expected `{}`",
                at + 1,
                names.get(at).map_or("<missing>", String::as_str),
                expected.get(at).map_or("<none>", String::as_str)
            ),
        ));
    }

    let mut states = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| schema(&csv_path, format!("row {row}: {e}")))?;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| IoError::Cell {
                path: csv_path.clone(),
                row,
                column: names[c].clone(),
                message: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(IoError::Cell {
                    path: csv_path.clone(),
                    row,
                    column: names[c].clone(),
                    message: format!("non-finite value `{raw}`"),
                });
            }
            Ok(v)
        };
        let t_raw = record.get(0).unwrap_or("");
        let t: u64 = t_raw.parse().map_err(|_| IoError::Cell {
            path: csv_path.clone(),
            row,
            column: "t".into(),
            message: format!("`{t_raw}` is not a frame index"),
        })?;
        let mut col = 1;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let v = (col..col + n).map(&cell).collect::<Result<Vec<_>>>()?;
            col += n;
            Ok(v)
        };
        let q = [take(dof[0])?, take(dof[1])?];
        let g = take(2)?;
        let mut arms = Vec::with_capacity(2);
        for (k, arm) in Arm::BOTH.into_iter().enumerate() {
            let p = take(3)?;
            let mut quat = [0.0; 4];
            quat.copy_from_slice(&take(4)?);
            let norm = quat.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > QUAT_LOAD_TOLERANCE {
                return Err(IoError::Validation {
                    path: csv_path.clone(),
                    row,
                    message: format!("{arm} quaternion norm {norm} is not within {QUAT_LOAD_TOLERANCE} of 1"),
                });
            }
            if (norm - 1.0).abs() > QUAT_EPISODE_TOLERANCE {
                quat.iter_mut().for_each(|v| *v /= norm);
            }
            arms.push(ArmState {
                q: q[k].clone(),
                g: g[k],
                position: Vector3::new(p[0], p[1], p[2]),
                quat,
            });
        }
        let camera = match cameras.len() {
            1 => cameras[0],
            n if n > i => cameras[i],
            n => {
                return Err(schema(&cam_path, format!("{n} cameras for at least {row} rows")));
            }
        };
        let right = arms.pop().expect("two arms");
        let left = arms.pop().expect("two arms");
        states.push(RobotState { t, left, right, camera });
    }
    if cameras.len() > 1 && cameras.len() != states.len() {
        return Err(schema(&cam_path, format!("{} cameras for {} rows", cameras.len(), states.len())));
    }
    let episode = Episode { states, meta };
    episode.validate().map_err(|e| match e {
        kvaf_core::episode::EpisodeError::FrameOrder { row, .. } | kvaf_core::episode::EpisodeError::Invalid { row, .. } => {
            IoError::Validation {
                path: csv_path.clone(),
                row: row + 1,
                message: e.to_string(),
            }
        }
        other => schema(&csv_path, other.to_string()),
    })?;
    Ok(episode)
}

/// Writes `states.csv`, `camera.json` and `meta.json` into `dir`.
pub fn save_episode(episode: &Episode, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let first = episode.states.first().ok_or_else(|| schema(dir, "episode has no frames"))?;
    let dof = [first.left.q.len(), first.right.q.len()];
    let csv_path = dir.join(STATES_FILE);
    let file = File::create(&csv_path).map_err(file_err(&csv_path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| schema(&csv_path, e.to_string());
    w.write_record(header(dof)).map_err(csv_err)?;
    for s in &episode.states {
        let mut rec = vec![s.t.to_string()];
        rec.extend(s.left.q.iter().chain(&s.right.q).map(|&v| fmt_f64(v)));
        rec.extend([fmt_f64(s.left.g), fmt_f64(s.right.g)]);
        for a in [&s.left, &s.right] {
            rec.extend(a.position.iter().chain(&a.quat).map(|&v| fmt_f64(v)));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(file_err(&csv_path))?;

    let cams: Vec<CameraModel> = episode.states.iter().map(|s| s.camera).collect();
    let cam_file = if cams.iter().all(|c| *c == cams[0]) {
        CameraFile::One(cams[0])
    } else {
        CameraFile::PerFrame(cams)
    };
    write_json(&dir.join(CAMERA_FILE), &cam_file)?;
    write_json(&dir.join(META_FILE), &episode.meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

pub fn frame_name(i: usize, format: ImageFormat) -> String {
    format!("frame_{i:05}.{}", format.extension())
}

/// Writes an 8-bit RGB image; the format follows the extension.
pub fn write_frame(path: &Path, frame: &KvafFrame) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let err = |e: image::ImageError| anyhow::anyhow!("{}: {e}", path.display());
    if path.extension().is_some_and(|e| e == "ppm") {
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::ImageEncoder;
        let file = create_writer(path)?;
        PnmEncoder::new(file)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(&frame.to_rgb8(), w, h, image::ExtendedColorType::Rgb8)
            .map_err(err)
    } else {
        image::save_buffer(path, &frame.to_rgb8(), w, h, image::ColorType::Rgb8).map_err(err)
    }
}

pub fn read_frame(path: &Path) -> anyhow::Result<KvafFrame> {
    let img = image::open(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?.to_rgb8();
    Ok(KvafFrame::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw()))
}

/// PPM and PNG files of a directory, in file-name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(file_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm" || e == "png"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn write_actions(path: &Path, actions: &ActionSequence) -> Result<()> {
    let mut out = String::from("t,");
    out.push_str(&ACTION_COLUMNS.join(","));
    out.push('\n');
    for (t, row) in actions.actions.iter().enumerate() {
        out.push_str(&t.to_string());
        for v in row {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_actions(path: &Path) -> Result<ActionSequence> {
    let file = File::open(path).map_err(file_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut actions = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| schema(path, e.to_string()))?;
        let mut row = [0.0; 14];
        for (c, slot) in row.iter_mut().enumerate() {
            let raw = rec.get(c + 1).unwrap_or("");
            *slot = raw.parse().map_err(|_| IoError::Cell {
                path: path.to_path_buf(),
                row: i + 1,
                column: ACTION_COLUMNS[c].into(),
                message: format!("`{raw}` is not a number"),
            })?;
        }
        actions.push(row);
    }
    Ok(ActionSequence { actions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into the flat array, in values.
    pub offset: usize,
}

/// JSON manifest written next to the raw little-endian `f64` parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dtype: String,
    pub count: usize,
    pub seed: u64,
    pub config_hash: String,
    pub model: ModelConfig,
    pub tensors: Vec<CheckpointTensor>,
    pub data_sha256: String,
}

pub fn save_checkpoint(params: &FusionParams, cfg: &ModelConfig, config_hash: &str, bin: &Path, manifest: &Path) -> Result<()> {
    let flat = params.to_flat(cfg);
    let bytes: Vec<u8> = flat.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut offset = 0;
    let tensors = params
        .layout(cfg)
        .into_iter()
        .map(|(name, shape)| {
            let t = CheckpointTensor { name, shape, offset };
            offset += shape[0] * shape[1];
            t
        })
        .collect();
    write_bytes(bin, &bytes)?;
    write_json(
        manifest,
        &CheckpointManifest {
            dtype: "f64-le".into(),
            count: flat.len(),
            seed: cfg.seed,
            config_hash: config_hash.into(),
            model: cfg.clone(),
            tensors,
            data_sha256: sha256_hex(&bytes),
        },
    )
}

pub fn load_checkpoint(bin: &Path, manifest: &Path) -> anyhow::Result<(FusionParams, CheckpointManifest)> {
    let m: CheckpointManifest = read_json(manifest)?;
    let bytes = fs::read(bin).map_err(file_err(bin))?;
    anyhow::ensure!(sha256_hex(&bytes) == m.data_sha256, "{}: checksum mismatch", bin.display());
    anyhow::ensure!(bytes.len() == 8 * m.count, "{}: expected {} values", bin.display(), m.count);
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut params = FusionParams::init(&m.model)?;
    let layout = params.layout(&m.model);
    anyhow::ensure!(
        layout.len() == m.tensors.len() && layout.iter().zip(&m.tensors).all(|((n, s), t)| *n == t.name && *s == t.shape),
        "{}: tensor layout does not match the model config",
        manifest.display()
    );
    params.load_flat(&m.model, &flat)?;
    Ok((params, m))
}

pub fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(file_err(path))?))
}

pub fn flush(mut w: impl Write, path: &Path) -> Result<()> {
    w.flush().map_err(file_err(path))
}
