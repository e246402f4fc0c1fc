//! `AGVD` video container.
//!
//! Layout, little-endian throughout:
//!
//! | field | type |
//! |---|---|
//! | magic | `b"AGVD"` |
//! | version | `u32` |
//! | H, W, C, n | `u32` each |
//! | frames | `n × H × W × C` `f32`, interleaved channels |
//! | challenge | `n × (α: u8, β: f32)` |
//! | depth labels | `H × W` `u8`, 1-based |
//! | material labels | `H × W` `u8`, 1-based |
//! | liveness | `u8`, 1 live, 0 spoof |

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::photometry::{LightCaptcha, LightParams, ReflectionFrame, CHANNELS, LIGHT_TYPES};
use crate::scene::{DEPTH_BINS, MATERIAL_CLASSES};

pub const VIDEO_MAGIC: &[u8; 4] = b"AGVD";
pub const VIDEO_VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 5 * 4;
/// Guards the size computation against absurd headers.
const MAX_SIDE: u32 = 4096;
const MAX_FRAMES: u32 = 1024;

/// A video with its challenge and ground truth, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFile {
    pub height: usize,
    pub width: usize,
    /// Frames carry their light from `challenge` and no fiducials.
    pub frames: Vec<ReflectionFrame>,
    pub challenge: Vec<LightParams>,
    pub depth_labels: Vec<u8>,
    pub material_labels: Vec<u8>,
    pub live: bool,
}

impl VideoFile {
    pub fn captcha(&self, seed: u64) -> Result<LightCaptcha> {
        LightCaptcha::new(self.challenge.clone(), seed)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height, self.width);
        if h == 0 || w == 0 || h > MAX_SIDE as usize || w > MAX_SIDE as usize {
            return Err(Error::Format(format!("bad frame size {h}x{w}")));
        }
        let n = self.frames.len();
        if n == 0 || n > MAX_FRAMES as usize || self.challenge.len() != n {
            return Err(Error::Format(format!(
                "{} frames for a challenge of {}",
                n,
                self.challenge.len()
            )));
        }
        for f in &self.frames {
            if (f.height, f.width) != (h, w) || f.pixels.len() != h * w * CHANNELS {
                return Err(Error::Format("frame size differs from header".into()));
            }
        }
        for lp in &self.challenge {
            if lp.alpha as usize >= LIGHT_TYPES || !lp.beta.is_finite() {
                return Err(Error::Format(format!(
                    "bad light ({}, {})",
                    lp.alpha, lp.beta
                )));
            }
        }
        check_labels(&self.depth_labels, h * w, DEPTH_BINS, "depth")?;
        check_labels(&self.material_labels, h * w, MATERIAL_CLASSES, "material")
    }

    /// Exact byte length of the encoded file.
    pub fn encoded_len(height: usize, width: usize, frames: usize) -> usize {
        let hw = height * width;
        HEADER_BYTES + frames * hw * CHANNELS * 4 + frames * 5 + 2 * hw + 1
    }
}

fn check_labels(labels: &[u8], len: usize, classes: usize, what: &str) -> Result<()> {
    if labels.len() != len {
        return Err(Error::Format(format!(
            "{what} map has {} entries, want {len}",
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l == 0 || l as usize > classes) {
        return Err(Error::Format(format!(
            "{what} label {l} outside 1..={classes}"
        )));
    }
    Ok(())
}

/// Frames are narrowed to `f32`; everything else is stored exactly.
pub fn write_video<W: Write>(mut out: W, video: &VideoFile) -> Result<()> {
    video.validate()?;
    let (h, w, n) = (video.height, video.width, video.frames.len());
    let mut buf = Vec::with_capacity(VideoFile::encoded_len(h, w, n));
    buf.extend_from_slice(VIDEO_MAGIC);
    for v in [VIDEO_VERSION, h as u32, w as u32, CHANNELS as u32, n as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for f in &video.frames {
        for &p in &f.pixels {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
    }
    for lp in &video.challenge {
        buf.push(lp.alpha);
        buf.extend_from_slice(&(lp.beta as f32).to_le_bytes());
    }
    buf.extend_from_slice(&video.depth_labels);
    buf.extend_from_slice(&video.material_labels);
    buf.push(video.live as u8);
    out.write_all(&buf)?;
    Ok(())
}

fn u32_at(bytes: &[u8], pos: usize) -> u32 {
    u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"))
}

fn f32_at(bytes: &[u8], pos: usize) -> f64 {
    f32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as f64
}

pub fn read_video<R: Read>(mut input: R) -> Result<VideoFile> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Format(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != VIDEO_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32_at(&bytes, 4);
    if version != VIDEO_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (h, w, c, n) = (
        u32_at(&bytes, 8),
        u32_at(&bytes, 12),
        u32_at(&bytes, 16),
        u32_at(&bytes, 20),
    );
    if c as usize != CHANNELS {
        return Err(Error::Format(format!("{c} channels, expected {CHANNELS}")));
    }
    if h == 0 || w == 0 || h > MAX_SIDE || w > MAX_SIDE || n == 0 || n > MAX_FRAMES {
        return Err(Error::Format(format!("bad header: {h}x{w}, {n} frames")));
    }
    let (h, w, n) = (h as usize, w as usize, n as usize);
    let expected = VideoFile::encoded_len(h, w, n);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "length {} does not match header ({expected} bytes)",
            bytes.len()
        )));
    }

    let hw = h * w;
    let frame_bytes = hw * CHANNELS * 4;
    let mut pos = HEADER_BYTES;
    let challenge_start = pos + n * frame_bytes;
    let challenge: Vec<LightParams> = (0..n)
        .map(|i| {
            let at = challenge_start + i * 5;
            LightParams {
                alpha: bytes[at],
                beta: f32_at(&bytes, at + 1),
            }
        })
        .collect();
    let mut frames = Vec::with_capacity(n);
    for &light in &challenge {
        let pixels = (0..hw * CHANNELS)
            .map(|k| f32_at(&bytes, pos + 4 * k))
            .collect();
        pos += frame_bytes;
        frames.push(ReflectionFrame {
            height: h,
            width: w,
            pixels,
            light,
            fiducials: Vec::new(),
        });
    }
    pos = challenge_start + n * 5;
    let depth_labels = bytes[pos..pos + hw].to_vec();
    let material_labels = bytes[pos + hw..pos + 2 * hw].to_vec();
    let live = match bytes[pos + 2 * hw] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("liveness byte {other}"))),
    };
    let video = VideoFile {
        height: h,
        width: w,
        frames,
        challenge,
        depth_labels,
        material_labels,
        live,
    };
    video.validate()?;
    Ok(video)
}

pub fn save_video(path: &std::path::Path, video: &VideoFile) -> Result<()> {
    let mut buf = Vec::new();
    write_video(&mut buf, video)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_video(path: &std::path::Path) -> Result<VideoFile> {
    read_video(std::fs::File::open(path)?)
}
