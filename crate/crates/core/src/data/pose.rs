use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array3, ArrayView3, Axis};

use super::layout::{SkeletonLayout, COORDINATE_DIMS};
use crate::error::{Error, Result};

pub const DEFAULT_FPS: f32 = 15.0;
const GPOS_MAGIC: &[u8; 5] = b"GPOS1";

/// A `T x J x 2` keypoint track in normalized image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: Array3<f32>,
    fps: f32,
    layout: Arc<SkeletonLayout>,
}

impl PoseSequence {
    pub fn new(frames: Array3<f32>, fps: f32, layout: Arc<SkeletonLayout>) -> Result<Self> {
        let (t, j, c) = frames.dim();
        if t == 0 {
            return Err(Error::Argument("pose sequence needs at least one frame".into()));
        }
        if j != layout.total_keypoints() || c != COORDINATE_DIMS {
            return Err(Error::schema(
                "pose sequence",
                format!(
                    "expected T x {} x {}, got {t} x {j} x {c}",
                    layout.total_keypoints(),
                    COORDINATE_DIMS
                ),
            ));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("pose coordinates must be finite".into()));
        }
        if !(fps > 0.0) {
            return Err(Error::Argument(format!("fps must be positive, got {fps}")));
        }
        Ok(Self {
            frames,
            fps,
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn layout(&self) -> &Arc<SkeletonLayout> {
        &self.layout
    }

    pub fn frames(&self) -> ArrayView3<'_, f32> {
        self.frames.view()
    }

    pub fn into_frames(self) -> Array3<f32> {
        self.frames
    }

    /// Body part `T x J_b x 2`.
    pub fn body(&self) -> Array3<f32> {
        self.frames.select(Axis(1), self.layout.body_indices())
    }

    /// Face part `T x J_f x 2`.
    pub fn face(&self) -> Array3<f32> {
        self.frames.select(Axis(1), self.layout.face_indices())
    }

    pub fn split(&self) -> (Array3<f32>, Array3<f32>) {
        (self.body(), self.face())
    }

    /// Inverse of [`split`](Self::split): scatter body and face keypoints back
    /// to their layout positions.
    pub fn fuse(
        body: ArrayView3<'_, f32>,
        face: ArrayView3<'_, f32>,
        fps: f32,
        layout: Arc<SkeletonLayout>,
    ) -> Result<Self> {
        let t = body.dim().0;
        if face.dim().0 != t {
            return Err(Error::Argument(format!(
                "body has {t} frames but face has {}",
                face.dim().0
            )));
        }
        if body.dim().1 != layout.num_body() || face.dim().1 != layout.num_face() {
            return Err(Error::Argument(format!(
                "expected {} body and {} face keypoints, got {} and {}",
                layout.num_body(),
                layout.num_face(),
                body.dim().1,
                face.dim().1
            )));
        }
        let mut frames = Array3::zeros((t, layout.total_keypoints(), COORDINATE_DIMS));
        for (k, &j) in layout.body_indices().iter().enumerate() {
            frames
                .slice_mut(s![.., j, ..])
                .assign(&body.slice(s![.., k, ..]));
        }
        for (k, &j) in layout.face_indices().iter().enumerate() {
            frames
                .slice_mut(s![.., j, ..])
                .assign(&face.slice(s![.., k, ..]));
        }
        Self::new(frames, fps, layout)
    }

    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() || len == 0 {
            return Err(Error::Argument(format!(
                "frame range {start}..{} outside 0..{}",
                start + len,
                self.len()
            )));
        }
        Self::new(
            self.frames.slice(s![start..start + len, .., ..]).to_owned(),
            self.fps,
            self.layout.clone(),
        )
    }

    /// Reads a GPOS1 binary or CSV pose file; format is chosen by magic bytes.
    pub fn read(path: &Path, fps: f32, layout: Arc<SkeletonLayout>) -> Result<Self> {
        let frames = read_pose_array(path)?;
        let (t, j, _) = frames.dim();
        if j != layout.total_keypoints() {
            return Err(Error::schema(
                path.display().to_string(),
                format!(
                    "expected {} keypoints per frame, found {j} (shape {t} x {j} x 2)",
                    layout.total_keypoints()
                ),
            ));
        }
        Self::new(frames, fps, layout)
    }

    pub fn write_gpos(&self, path: &Path) -> Result<()> {
        write_gpos(path, self.frames.view())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for frame in self.frames.outer_iter() {
            let row: Vec<String> = frame.iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads a pose file without checking it against a layout.
pub fn read_pose_array(path: &Path) -> Result<Array3<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(GPOS_MAGIC) {
        parse_gpos(&bytes).map_err(|m| Error::corrupt(path.display().to_string(), m))
    } else {
        parse_csv(&bytes).map_err(|m| Error::schema(path.display().to_string(), m))
    }
}

fn parse_gpos(bytes: &[u8]) -> std::result::Result<Array3<f32>, String> {
    let header = GPOS_MAGIC.len() + 12;
    if bytes.len() < header {
        return Err("truncated GPOS1 header".into());
    }
    let word = |i: usize| {
        let o = GPOS_MAGIC.len() + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let (t, j, c) = (word(0), word(1), word(2));
    if c != COORDINATE_DIMS {
        return Err(format!("coordinate dimension {c}, expected 2"));
    }
    let n = t * j * c;
    if bytes.len() != header + 4 * n {
        return Err(format!(
            "payload holds {} bytes, header declares {t} x {j} x {c}",
            bytes.len() - header
        ));
    }
    let data: Vec<f32> = bytes[header..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Array3::from_shape_vec((t, j, c), data).map_err(|e| e.to_string())
}

fn parse_csv(bytes: &[u8]) -> std::result::Result<Array3<f32>, String> {
    let text = std::str::from_utf8(bytes).map_err(|_| "neither GPOS1 nor UTF-8 CSV".to_string())?;
    let mut data = Vec::new();
    let mut width = None;
    let mut t = 0;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f32>, _> =
            line.split(',').map(|v| v.trim().parse::<f32>()).collect();
        let row = row.map_err(|e| format!("line {}: {e}", line_no + 1))?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(format!(
                    "line {} has {} values, expected {w}",
                    line_no + 1,
                    row.len()
                ))
            }
            _ => {}
        }
        data.extend(row);
        t += 1;
    }
    let w = width.ok_or("empty pose CSV")?;
    if w % COORDINATE_DIMS != 0 {
        return Err(format!("{w} values per frame is not a multiple of 2"));
    }
    Array3::from_shape_vec((t, w / COORDINATE_DIMS, COORDINATE_DIMS), data).map_err(|e| e.to_string())
}

pub fn write_gpos(path: &Path, frames: ArrayView3<'_, f32>) -> Result<()> {
    let (t, j, c) = frames.dim();
    let mut buf = Vec::with_capacity(GPOS_MAGIC.len() + 12 + 4 * t * j * c);
    buf.extend_from_slice(GPOS_MAGIC);
    for d in [t, j, c] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in frames.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> Arc<SkeletonLayout> {
        Arc::new(SkeletonLayout::default())
    }

    fn ramp(t: usize) -> Array3<f32> {
        Array3::from_shape_fn((t, 121, 2), |(a, b, c)| (a * 1000 + b * 2 + c) as f32 * 1e-3)
    }

    #[test]
    fn gpos_and_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pose = PoseSequence::new(ramp(5), 15.0, layout()).unwrap();
        let bin = dir.path().join("p.gpos");
        let csv = dir.path().join("p.csv");
        pose.write_gpos(&bin).unwrap();
        pose.write_csv(&csv).unwrap();
        assert_eq!(PoseSequence::read(&bin, 15.0, layout()).unwrap(), pose);
        assert_eq!(PoseSequence::read(&csv, 15.0, layout()).unwrap(), pose);
    }

    #[test]
    fn keypoint_count_mismatch_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.gpos");
        write_gpos(&path, Array3::<f32>::zeros((4, 120, 2)).view()).unwrap();
        let err = PoseSequence::read(&path, 15.0, layout()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Schema { .. }));
        assert!(msg.contains("121") && msg.contains("120"), "{msg}");
    }

    #[test]
    fn truncated_gpos_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.gpos");
        std::fs::write(&path, b"GPOS1\x02\x00").unwrap();
        assert!(matches!(
            read_pose_array(&path).unwrap_err(),
            Error::Corrupt { .. }
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let mut frames = ramp(2);
        frames[[1, 3, 0]] = f32::NAN;
        assert!(PoseSequence::new(frames, 15.0, layout()).is_err());
    }

    proptest! {
        #[test]
        fn split_then_fuse_is_identity(t in 1usize..6, seed in 0u32..1000) {
            let frames = Array3::from_shape_fn((t, 121, 2), |(a, b, c)| {
                ((a * 7919 + b * 104729 + c * 31 + seed as usize) % 997) as f32 / 997.0
            });
            let pose = PoseSequence::new(frames, 15.0, layout()).unwrap();
            let (body, face) = pose.split();
            let fused = PoseSequence::fuse(body.view(), face.view(), 15.0, layout()).unwrap();
            prop_assert_eq!(fused, pose);
        }
    }
}
