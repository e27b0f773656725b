//! The kinetogram: a keypoint track drawn as a 10-pixel-high, T-pixel-wide
//! image with three byte channels.
//!
//! Channel 0 holds the high byte and channel 1 the low byte of each
//! position, stored as signed 16-bit offset binary. Channel 2 holds the
//! frame-difference velocity in one byte. The six source rows are padded by
//! mirroring two rows at each edge, giving the layout
//! `[s2, s1, s0, s1, s2, s3, s4, s5, s4, s3]`.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::keypoints::{KeypointTrack, NUM_VALUES};

pub const HEIGHT: usize = 10;
pub const CHANNELS: usize = 3;

/// Source value shown on each image row, top to bottom.
pub const ROW_SOURCES: [usize; HEIGHT] = [2, 1, 0, 1, 2, 3, 4, 5, 4, 3];
/// Image row holding the unreflected copy of source row `i`.
pub const SOURCE_ROW_OFFSET: usize = 2;

const POSITION_SCALE: f64 = 32767.0;
const VELOCITY_SCALE: f64 = 1024.0;

/// Per-channel divisors of the network input. Velocity bytes rarely stray
/// more than a few dozen steps from 128, so they get a smaller divisor.
pub const INPUT_DIVISORS: [f64; CHANNELS] = [128.0, 128.0, 16.0];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kinetogram {
    width: usize,
    /// Channel-major planes: `[channel][row][col]`.
    data: Vec<u8>,
}

/// Signed 16-bit quantization of a normalized position.
pub fn quantize_position(v: f64) -> i32 {
    (v * POSITION_SCALE).round().clamp(-32768.0, 32767.0) as i32
}

/// The value a position decodes back to after quantization.
pub fn quantized_value(v: f64) -> f64 {
    quantize_position(v) as f64 / POSITION_SCALE
}

/// `(high, low)` bytes of the offset-binary position.
pub fn position_bytes(v: f64) -> (u8, u8) {
    let u = (quantize_position(v) + 32768) as u32;
    ((u >> 8) as u8, (u & 0xff) as u8)
}

pub fn velocity_byte(d: f64) -> u8 {
    ((d * VELOCITY_SCALE).round().clamp(-128.0, 127.0) + 128.0) as u8
}

pub fn decode_velocity_byte(b: u8) -> f64 {
    (b as f64 - 128.0) / VELOCITY_SCALE
}

impl Kinetogram {
    pub fn from_raw(width: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || data.len() != CHANNELS * HEIGHT * width {
            return Err(Error::Shape(format!(
                "kinetogram of width {width} needs {} bytes, got {}",
                CHANNELS * HEIGHT * width,
                data.len()
            )));
        }
        Ok(Kinetogram { width, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * HEIGHT + row) * self.width + col
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.data[self.index(channel, row, col)]
    }

    /// One image row of one channel.
    pub fn row(&self, channel: usize, row: usize) -> &[u8] {
        let start = self.index(channel, row, 0);
        &self.data[start..start + self.width]
    }

    fn check_index(&self, source_row: usize, col: usize) -> Result<()> {
        if source_row >= NUM_VALUES || col >= self.width {
            return Err(Error::InvalidInput(format!(
                "index ({source_row}, {col}) outside 6 x {}",
                self.width
            )));
        }
        Ok(())
    }

    /// Position decoded from the two image bytes at an image row.
    pub fn position_at(&self, row: usize, col: usize) -> f64 {
        let u = (self.get(0, row, col) as i32) << 8 | self.get(1, row, col) as i32;
        (u - 32768) as f64 / POSITION_SCALE
    }

    /// Convert to a network input `(3, 10, W)`: byte `b` of channel `c` maps
    /// to `(b - 128) / INPUT_DIVISORS[c]`.
    pub fn to_input<T: num_traits::Float>(&self) -> Vec<T> {
        let mid = T::from(128.0).unwrap();
        let plane = HEIGHT * self.width;
        let mut out = Vec::with_capacity(self.data.len());
        for (c, bytes) in self.data.chunks(plane.max(1)).enumerate() {
            let d = T::from(INPUT_DIVISORS[c]).unwrap();
            out.extend(bytes.iter().map(|&b| (T::from(b).unwrap() - mid) / d));
        }
        out
    }
}

/// Encodes a track into its kinetogram.
pub fn encode(track: &KeypointTrack) -> Kinetogram {
    let width = track.len();
    let mut data = vec![0u8; CHANNELS * HEIGHT * width];
    let mut prev = *track.values(0);
    for t in 0..width {
        let cur = *track.values(t);
        for (row, &src) in ROW_SOURCES.iter().enumerate() {
            let (hi, lo) = position_bytes(cur[src]);
            let vel = if t == 0 { 128 } else { velocity_byte(cur[src] - prev[src]) };
            data[row * width + t] = hi;
            data[(HEIGHT + row) * width + t] = lo;
            data[(2 * HEIGHT + row) * width + t] = vel;
        }
        prev = cur;
    }
    Kinetogram { width, data }
}

/// Places a kinetogram into exactly `width` columns.
///
/// Wider inputs are cropped to `[crop_start, crop_start + width)`. Narrower
/// ones are padded on both sides (the extra column goes at the end) by
/// holding the edge positions with zero velocity; `crop_start` is then
/// ignored. Returns the result and the frame shown in its first column,
/// which is negative when padded.
pub fn fit_width(k: &Kinetogram, width: usize, crop_start: usize) -> Result<(Kinetogram, isize)> {
    if width == 0 {
        return Err(Error::Shape("target width must be positive".into()));
    }
    let len = k.width;
    if len >= width {
        if crop_start + width > len {
            return Err(Error::Shape(format!(
                "crop [{crop_start}, {}) outside {len} columns",
                crop_start + width
            )));
        }
        let mut data = Vec::with_capacity(CHANNELS * HEIGHT * width);
        for ch in 0..CHANNELS {
            for row in 0..HEIGHT {
                data.extend_from_slice(&k.row(ch, row)[crop_start..crop_start + width]);
            }
        }
        return Ok((Kinetogram { width, data }, crop_start as isize));
    }
    let front = (width - len) / 2;
    let mut data = Vec::with_capacity(CHANNELS * HEIGHT * width);
    for ch in 0..CHANNELS {
        for row in 0..HEIGHT {
            let src = k.row(ch, row);
            let (first, last) = if ch == CHANNELS - 1 {
                (128, 128)
            } else {
                (src[0], src[len - 1])
            };
            data.extend(std::iter::repeat_n(first, front));
            data.extend_from_slice(src);
            data.extend(std::iter::repeat_n(last, width - len - front));
        }
    }
    Ok((Kinetogram { width, data }, -(front as isize)))
}

/// Start column of a centered crop.
pub fn center_crop_start(len: usize, width: usize) -> usize {
    len.saturating_sub(width) / 2
}

/// Decodes the position of a source value (0..6) at a column.
pub fn decode_position(k: &Kinetogram, source_row: usize, col: usize) -> Result<f64> {
    k.check_index(source_row, col)?;
    Ok(k.position_at(source_row + SOURCE_ROW_OFFSET, col))
}

/// Decodes the stored frame-difference velocity of a source value.
pub fn decode_velocity(k: &Kinetogram, source_row: usize, col: usize) -> Result<f64> {
    k.check_index(source_row, col)?;
    Ok(decode_velocity_byte(k.get(2, source_row + SOURCE_ROW_OFFSET, col)))
}

/// Number of frames produced by [`resample_speed`].
pub fn resampled_len(len: usize, factor: f64) -> usize {
    // The epsilon absorbs representation error in factors like 0.75.
    ((len - 1) as f64 / factor + 1e-9).floor() as usize + 1
}

/// Plays a track back `factor` times faster by linear interpolation of the
/// positions at times `t * factor`. Velocities follow from the new positions.
pub fn resample_speed(track: &KeypointTrack, factor: f64) -> Result<KeypointTrack> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::InvalidInput(format!("speed factor must be positive, got {factor}")));
    }
    let len = track.len();
    let out_len = resampled_len(len, factor);
    if out_len < 2 {
        return Err(Error::InvalidInput(format!(
            "speed factor {factor} leaves {out_len} frame(s) of {len}"
        )));
    }
    let values: Vec<[f64; NUM_VALUES]> = (0..out_len)
        .map(|t| {
            let s = (t as f64 * factor).min((len - 1) as f64);
            let i = (s.floor() as usize).min(len - 2);
            let frac = s - i as f64;
            let a = track.values(i);
            let b = track.values(i + 1);
            std::array::from_fn(|j| {
                if frac == 0.0 {
                    a[j]
                } else if frac == 1.0 {
                    b[j]
                } else {
                    a[j] + frac * (b[j] - a[j])
                }
            })
        })
        .collect();
    KeypointTrack::new_clamped(values, track.fps())
}

pub fn write_ppm<W: Write>(k: &Kinetogram, mut out: W) -> Result<()> {
    write!(out, "P6\n{} {}\n255\n", k.width, HEIGHT)?;
    let plane = HEIGHT * k.width;
    let mut pixels = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        pixels.extend_from_slice(&[k.data[i], k.data[plane + i], k.data[2 * plane + i]]);
    }
    out.write_all(&pixels)?;
    Ok(())
}

/// Binary P6 export: RGB = (position high, position low, velocity).
pub fn export_ppm(k: &Kinetogram, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_ppm(k, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        match byte[0] {
            b'#' if token.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            b if b.is_ascii_whitespace() => {
                if !token.is_empty() {
                    break;
                }
            }
            b => token.push(b),
        }
    }
    String::from_utf8(token).map_err(|_| Error::InvalidInput("non-ASCII PPM header".into()))
}

fn read_pnm_header<R: BufRead>(r: &mut R, magic: &str) -> Result<(usize, usize)> {
    let bad = |what: &str| Error::InvalidInput(format!("PNM header: {what}"));
    if read_token(r)? != magic {
        return Err(bad("wrong magic"));
    }
    let width: usize = read_token(r)?.parse().map_err(|_| bad("width"))?;
    let height: usize = read_token(r)?.parse().map_err(|_| bad("height"))?;
    if read_token(r)? != "255" {
        return Err(bad("only maxval 255 is supported"));
    }
    Ok((width, height))
}

/// Reads back a P6 file written by [`write_ppm`].
pub fn read_ppm<R: BufRead>(mut r: R) -> Result<Kinetogram> {
    let (width, height) = read_pnm_header(&mut r, "P6")?;
    if height != HEIGHT {
        return Err(Error::Shape(format!("kinetogram height must be {HEIGHT}, got {height}")));
    }
    let plane = HEIGHT * width;
    let mut pixels = vec![0u8; 3 * plane];
    r.read_exact(&mut pixels)?;
    let mut data = vec![0u8; 3 * plane];
    for i in 0..plane {
        for c in 0..CHANNELS {
            data[c * plane + i] = pixels[3 * i + c];
        }
    }
    Kinetogram::from_raw(width, data)
}

pub fn import_ppm(path: &Path) -> Result<Kinetogram> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    read_ppm(std::io::BufReader::new(file))
}

/// Red for negative, green for positive decoded positions.
pub fn visualization_pixel(v: f64) -> [u8; 3] {
    let red = (255.0 * (-v).max(0.0)).round().min(255.0) as u8;
    let green = (255.0 * v.max(0.0)).round().min(255.0) as u8;
    [red, green, 0]
}

pub fn write_visualization<W: Write>(k: &Kinetogram, mut out: W) -> Result<()> {
    write!(out, "P6\n{} {}\n255\n", k.width, HEIGHT)?;
    let mut pixels = Vec::with_capacity(3 * HEIGHT * k.width);
    for row in 0..HEIGHT {
        for col in 0..k.width {
            pixels.extend_from_slice(&visualization_pixel(k.position_at(row, col)));
        }
    }
    out.write_all(&pixels)?;
    Ok(())
}

pub fn render_visualization(k: &Kinetogram, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_visualization(k, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_track(rng: &mut ChaCha8Rng, len: usize) -> KeypointTrack {
        let values = (0..len)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
            .collect();
        KeypointTrack::new(values, 25.0).unwrap()
    }

    #[test]
    fn stationary_track_has_flat_rows_and_zero_velocity() {
        let track = KeypointTrack::new(vec![[0.3, -0.2, -0.5, 0.4, 0.0, -0.7]; 20], 25.0).unwrap();
        let k = encode(&track);
        for row in 0..HEIGHT {
            for ch in 0..2 {
                let r = k.row(ch, row);
                assert!(r.iter().all(|&b| b == r[0]));
            }
            assert!(k.row(2, row).iter().all(|&b| b == 128));
        }
    }

    #[test]
    fn right_hand_x_row_brightens_towards_zero() {
        // Right hand moving from x = -0.8 towards 0; source row 2.
        let values = (0..25)
            .map(|t| {
                let x = -0.8 + 0.8 * t as f64 / 24.0;
                [0.4, 0.3, x, 0.3, 0.0, -0.5]
            })
            .collect();
        let k = encode(&KeypointTrack::new(values, 25.0).unwrap());
        let decoded: Vec<f64> = (0..25).map(|c| decode_position(&k, 2, c).unwrap()).collect();
        assert!(decoded.windows(2).all(|w| w[1] > w[0]));
        // Red channel of the visualization fades as x approaches zero.
        let reds: Vec<u8> = decoded.iter().map(|&v| visualization_pixel(v)[0]).collect();
        assert!(reds.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*reds.last().unwrap(), 0);
    }

    #[test]
    fn zero_and_one_decode_exactly() {
        let track = KeypointTrack::new(vec![[0.0, 1.0, -1.0, 0.0, 0.0, 0.0]; 2], 25.0).unwrap();
        let k = encode(&track);
        assert_eq!(decode_position(&k, 0, 0).unwrap(), 0.0);
        assert_eq!(decode_position(&k, 1, 1).unwrap(), 1.0);
        assert_eq!(k.get(0, 2, 0), 128);
        assert_eq!(k.get(1, 2, 0), 0);
    }

    #[test]
    fn decode_within_quantization_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let track = random_track(&mut rng, 12);
            let k = encode(&track);
            for t in 0..track.len() {
                for s in 0..NUM_VALUES {
                    let v = track.values(t)[s];
                    let d = decode_position(&k, s, t).unwrap();
                    assert_eq!(d, (v * 32767.0).round().clamp(-32768.0, 32767.0) / 32767.0);
                    assert!((d - v).abs() <= 1.0 / 32767.0);
                }
            }
        }
    }

    #[test]
    fn decode_rejects_bad_indices() {
        let k = encode(&KeypointTrack::new(vec![[0.0; 6]; 3], 25.0).unwrap());
        assert!(decode_position(&k, 6, 0).is_err());
        assert!(decode_position(&k, 0, 3).is_err());
    }

    #[test]
    fn reflection_rows_are_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = encode(&random_track(&mut rng, 30));
        for ch in 0..CHANNELS {
            assert_eq!(k.row(ch, 0), k.row(ch, 4));
            assert_eq!(k.row(ch, 1), k.row(ch, 3));
            assert_eq!(k.row(ch, 8), k.row(ch, 6));
            assert_eq!(k.row(ch, 9), k.row(ch, 5));
        }
    }

    #[test]
    fn velocity_byte_examples() {
        assert_eq!(velocity_byte(0.0), 128);
        assert_eq!(velocity_byte(1.0), 255);
        assert_eq!(velocity_byte(-1.0), 0);
        assert_eq!(velocity_byte(10.0 / 1024.0), 138);
    }

    #[test]
    fn resample_identity_and_linear_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let track = random_track(&mut rng, 40);
        assert_eq!(resample_speed(&track, 1.0).unwrap(), track);

        let values = (0..41)
            .map(|t| {
                let x = -0.5 + 0.01 * t as f64;
                [x, x, x, x, x, x]
            })
            .collect();
        let linear = KeypointTrack::new(values, 25.0).unwrap();
        let fast = resample_speed(&linear, 2.0).unwrap();
        assert_eq!(fast.len(), 21);
        for t in 1..fast.len() {
            let d = fast.values(t)[0] - fast.values(t - 1)[0];
            assert!((d - 0.02).abs() < 1e-12);
        }
    }

    #[test]
    fn resampled_velocities_are_recomputed() {
        let values = (0..60)
            .map(|t| {
                let p = t as f64 / 10.0;
                [0.3 * p.sin(), 0.2 * p.cos(), -0.4 + 0.1 * (0.5 * p).sin(), 0.1, 0.0, -0.5]
            })
            .collect();
        let track = KeypointTrack::new(values, 25.0).unwrap();
        let slow = resample_speed(&track, 0.75).unwrap();
        assert_eq!(slow.len(), 79);
        let k = encode(&slow);
        for t in 1..slow.len() {
            for s in 0..NUM_VALUES {
                let diff = slow.values(t)[s] - slow.values(t - 1)[s];
                assert_eq!(k.get(2, s + SOURCE_ROW_OFFSET, t), velocity_byte(diff));
            }
        }
        // Interpolated positions sit on the original polyline.
        let expect = track.values(5)[0] + 0.25 * (track.values(6)[0] - track.values(5)[0]);
        assert!((slow.values(7)[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn resample_too_short_is_an_error() {
        let track = KeypointTrack::new(vec![[0.0; 6]; 3], 25.0).unwrap();
        assert!(resample_speed(&track, 5.0).is_err());
        assert!(resample_speed(&track, 0.0).is_err());
    }

    #[test]
    fn ppm_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            let k = encode(&random_track(&mut rng, 5 + 7 * i));
            let path = dir.path().join(format!("k{i}.ppm"));
            export_ppm(&k, &path).unwrap();
            assert_eq!(import_ppm(&path).unwrap(), k);
        }
    }

    #[test]
    fn visualization_pixels() {
        assert_eq!(visualization_pixel(-1.0), [255, 0, 0]);
        assert_eq!(visualization_pixel(0.0), [0, 0, 0]);
        assert_eq!(visualization_pixel(0.5), [0, 128, 0]);
    }

    #[test]
    fn input_tensor_scaling() {
        let track = KeypointTrack::new(vec![[0.0; 6]; 2], 25.0).unwrap();
        let input: Vec<f64> = encode(&track).to_input();
        assert_eq!(input.len(), 3 * HEIGHT * 2);
        // High byte 128 -> 0, low byte 0 -> -1, velocity 128 -> 0.
        assert_eq!(input[0], 0.0);
        assert_eq!(input[HEIGHT * 2], -1.0);
        assert_eq!(input[2 * HEIGHT * 2], 0.0);
    }

    #[test]
    fn fit_width_pads_with_held_positions() {
        let values: Vec<[f64; NUM_VALUES]> = (0..5).map(|t| [0.1 * t as f64; NUM_VALUES]).collect();
        let track = KeypointTrack::new(values.clone(), 25.0).unwrap();
        let k = encode(&track);
        let (fit, first) = fit_width(&k, 10, 3).unwrap();
        assert_eq!(first, -2);
        // Same as encoding a hold-padded track.
        let mut held = vec![values[0]; 2];
        held.extend(values.iter().copied());
        held.extend(std::iter::repeat_n(values[4], 3));
        assert_eq!(fit, encode(&KeypointTrack::new(held, 25.0).unwrap()));
    }

    #[test]
    fn fit_width_crops_columns() {
        let values: Vec<[f64; NUM_VALUES]> = (0..9).map(|t| [0.05 * t as f64; NUM_VALUES]).collect();
        let k = encode(&KeypointTrack::new(values, 25.0).unwrap());
        let (fit, first) = fit_width(&k, 4, 3).unwrap();
        assert_eq!(first, 3);
        for ch in 0..CHANNELS {
            for row in 0..HEIGHT {
                assert_eq!(fit.row(ch, row), &k.row(ch, row)[3..7]);
            }
        }
        assert!(fit_width(&k, 4, 6).is_err());
        assert_eq!(center_crop_start(9, 4), 2);
        assert_eq!(fit_width(&k, 9, 0).unwrap().0, k);
    }
}
