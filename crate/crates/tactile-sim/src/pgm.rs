//! Binary PGM (P5) export for eyeballing rendered frames.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use tactile_core::Tensor;

use crate::SimError;

/// Write one `[3, H, W]` frame as 8-bit grayscale, averaging the channels.
pub fn write_pgm(path: &Path, frame: &Tensor) -> Result<(), SimError> {
    let (c, h, w) = frame.dims3().map_err(|_| SimError::Invalid {
        reason: format!("expected a [C, H, W] frame, got {:?}", frame.shape()),
    })?;
    let mut bytes = Vec::with_capacity(h * w + 32);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    let plane = h * w;
    for i in 0..plane {
        let mut sum = 0.0f32;
        for ch in 0..c {
            sum += frame.data()[ch * plane + i];
        }
        let v = (sum / c as f32).clamp(0.0, 1.0);
        bytes.push((v * 255.0 + 0.5) as u8);
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Write every frame of a `[F, C, H, W]` clip (or a single `[C, H, W]`
/// image) as `<stem>_<index>.pgm` in `dir`. Returns the paths written.
pub fn export_frames(
    dir: &Path,
    stem: &str,
    tensor: &Tensor,
) -> Result<Vec<std::path::PathBuf>, SimError> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    match tensor.rank() {
        3 => {
            let path = dir.join(format!("{stem}_0.pgm"));
            write_pgm(&path, tensor)?;
            paths.push(path);
        }
        4 => {
            let (f, c, h, w) = tensor.dims4()?;
            let frame_len = c * h * w;
            for k in 0..f {
                let frame = Tensor::new(
                    vec![c, h, w],
                    tensor.data()[k * frame_len..(k + 1) * frame_len].to_vec(),
                )?;
                let path = dir.join(format!("{stem}_{k}.pgm"));
                write_pgm(&path, &frame)?;
                paths.push(path);
            }
        }
        r => {
            return Err(SimError::Invalid {
                reason: format!("cannot export rank-{r} tensor as frames"),
            })
        }
    }
    Ok(paths)
}
