use std::io::{self, Write};
use std::path::Path;

use hamfield::system::Trajectory;
use tempfile::NamedTempFile;

/// Full-precision text for a float: 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write to a temporary file next to `path`, then rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Columns `t, u_1..u_r, p_1..p_r`, one row per grid node.
pub fn trajectory_csv(traj: &Trajectory) -> io::Result<Vec<u8>> {
    let r = traj.dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((1..=r).map(|a| format!("u_{a}")));
    header.extend((1..=r).map(|a| format!("p_{a}")));
    w.write_record(&header)?;
    for ((t, u), p) in traj.times().iter().zip(traj.positions()).zip(traj.momenta()) {
        let row = std::iter::once(*t).chain(u.iter().copied()).chain(p.iter().copied()).map(format_float);
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| e.into_error())
}
