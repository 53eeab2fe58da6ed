use funnel_hoi::numerics::Tensor;
use funnel_hoi::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// One line per row of a 2-D map, values in shortest round-trip form.
pub fn map_csv(rows: usize, cols: usize, data: &[f64]) -> String {
    let mut s = String::with_capacity(rows * cols * 12);
    for r in 0..rows {
        for (c, v) in data[r * cols..(r + 1) * cols].iter().enumerate() {
            if c > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    s
}

/// Binary 8-bit greymap, min-max normalized over the whole map. A constant
/// map comes out black.
pub fn pgm(rows: usize, cols: usize, data: &[f64]) -> Vec<u8> {
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(data.iter().map(|&v| {
        if span > 0.0 {
            (255.0 * (v - lo) / span).round() as u8
        } else {
            0
        }
    }));
    out
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Writes `<probe>_fused.csv` and, per candidate, `<probe>_<j>_<name>.csv`
/// and `.pgm`. Returns the file names written.
pub fn write_probe(dir: &Path, probe: &str, fused: &Tensor, per_candidate: &Tensor, names: &[String]) -> Result<Vec<String>> {
    let (rows, cols) = (fused.rows(), fused.cols());
    let mut files = vec![format!("{probe}_fused.csv")];
    write(&dir.join(&files[0]), map_csv(rows, cols, fused.data()).as_bytes())?;
    let size = rows * cols;
    for (j, name) in names.iter().enumerate() {
        let data = &per_candidate.data()[j * size..(j + 1) * size];
        let stem = format!("{probe}_{j}_{}", file_stem(name));
        write(&dir.join(format!("{stem}.csv")), map_csv(rows, cols, data).as_bytes())?;
        write(&dir.join(format!("{stem}.pgm")), &pgm(rows, cols, data))?;
        files.push(format!("{stem}.csv"));
        files.push(format!("{stem}.pgm"));
    }
    Ok(files)
}
