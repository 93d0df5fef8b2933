use std::io::{Read, Write};
use std::process::{Command, Stdio};

use crate::error::{Error, Result};
use crate::image::{read_image_bytes, write_image_bytes, Image, ImageFormat};

/// Pipes `raster` through `sh -c <template>` as FMDF and reads one FMDF raster back.
pub fn run_external(template: &str, raster: &Image, sigma: f64) -> Result<Image> {
    let command = template.replace("{sigma}", &sigma.to_string());
    let payload = write_image_bytes(raster, ImageFormat::Fmdf)?;
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::External(format!("cannot spawn `{command}`: {e}")))?;

    let mut stdin = child.stdin.take().expect("stdin is piped");
    // Feed stdin from a separate thread so a child that writes before it
    // finishes reading cannot deadlock on a full pipe.
    let writer = std::thread::spawn(move || {
        // A child that exits early closes the pipe; that surfaces via its status.
        let _ = stdin.write_all(&payload);
    });
    let mut stdout = Vec::new();
    child
        .stdout
        .take()
        .expect("stdout is piped")
        .read_to_end(&mut stdout)
        .map_err(|e| Error::External(format!("reading stdout of `{command}`: {e}")))?;
    let mut stderr = String::new();
    if let Some(mut err) = child.stderr.take() {
        let _ = err.read_to_string(&mut stderr);
    }
    let status = child
        .wait()
        .map_err(|e| Error::External(format!("waiting for `{command}`: {e}")))?;
    let _ = writer.join();
    if !status.success() {
        return Err(Error::External(format!(
            "`{command}` exited with {status}: {}",
            stderr.trim()
        )));
    }
    let out = read_image_bytes(&stdout)
        .map_err(|e| Error::External(format!("`{command}` produced a malformed raster: {e}")))?;
    if !out.same_shape(raster) {
        return Err(Error::External(format!(
            "`{command}` returned {}x{}x{}, expected {}x{}x{}",
            out.width(),
            out.height(),
            out.channels(),
            raster.width(),
            raster.height(),
            raster.channels()
        )));
    }
    out.with_peak(raster.peak())
}
