//! On-disk formats: force-map container, model files and figure data.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::forcemap::{ForceMap, GridSpec};
use crate::mbi::MbiModel;

const MAP_MAGIC: &[u8; 4] = b"FMAP";
const MAP_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "telemap-mbi-model";
const MODEL_VERSION: u32 = 1;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn malformed(path: &Path, detail: impl Into<String>) -> PipelineError {
    PipelineError::Artifact { path: path.to_path_buf(), detail: detail.into() }
}

/// Creates parent directories and writes `contents`.
pub fn write_text(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Binary container of maps sharing one grid.
///
/// Layout (little endian): `FMAP`, version u32, rows u32, cols u32, grid bounds as
/// four f64, count u32; then per map an id (u32 length + UTF-8), captured mass f64 and
/// `rows * cols` f64 weights in row-major order.
pub fn write_force_maps(path: &Path, grid: &GridSpec, maps: &[ForceMap]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        w.write_all(MAP_MAGIC)?;
        w.write_u32::<LittleEndian>(MAP_VERSION)?;
        w.write_u32::<LittleEndian>(grid.rows as u32)?;
        w.write_u32::<LittleEndian>(grid.cols as u32)?;
        for b in [grid.f_min, grid.f_max, grid.d_min, grid.d_max] {
            w.write_f64::<LittleEndian>(b)?;
        }
        w.write_u32::<LittleEndian>(maps.len() as u32)?;
        for m in maps {
            w.write_u32::<LittleEndian>(m.participant_id.len() as u32)?;
            w.write_all(m.participant_id.as_bytes())?;
            w.write_f64::<LittleEndian>(m.captured_mass)?;
            for row in m.weights.row_iter() {
                for &x in row.iter() {
                    w.write_f64::<LittleEndian>(x)?;
                }
            }
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

pub fn read_force_maps(path: &Path) -> Result<(GridSpec, Vec<ForceMap>), PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let trunc = |e: std::io::Error| malformed(path, format!("truncated container: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MAP_MAGIC {
        return Err(malformed(path, "not a force-map container"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
    if version != MAP_VERSION {
        return Err(malformed(path, format!("unsupported version {version}")));
    }
    let rows = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let cols = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let mut b = [0.0; 4];
    for x in &mut b {
        *x = r.read_f64::<LittleEndian>().map_err(trunc)?;
    }
    let grid = GridSpec::new((b[0], b[1]), (b[2], b[3]), rows, cols).map_err(|e| malformed(path, e.to_string()))?;
    let count = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let mut maps = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id).map_err(trunc)?;
        let id = String::from_utf8(id).map_err(|_| malformed(path, "participant id is not UTF-8"))?;
        let captured_mass = r.read_f64::<LittleEndian>().map_err(trunc)?;
        let mut weights = vec![0.0; rows * cols];
        r.read_f64_into::<LittleEndian>(&mut weights).map_err(trunc)?;
        let mut map = ForceMap::from_weights(id, DMatrix::from_row_slice(rows, cols, &weights), grid)
            .map_err(|e| malformed(path, e.to_string()))?;
        map.captured_mass = captured_mass;
        maps.push(map);
    }
    Ok((grid, maps))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: MbiModel,
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'a str,
    version: u32,
    model: &'a MbiModel,
}

pub fn write_model(path: &Path, model: &MbiModel) -> Result<(), PipelineError> {
    let doc = ModelFileRef { format: MODEL_FORMAT, version: MODEL_VERSION, model };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| malformed(path, e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn read_model(path: &Path) -> Result<MbiModel, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let doc: ModelFile = serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))?;
    if doc.format != MODEL_FORMAT {
        return Err(malformed(path, format!("unexpected format {:?}", doc.format)));
    }
    if doc.version != MODEL_VERSION {
        return Err(malformed(path, format!("unsupported version {}", doc.version)));
    }
    Ok(doc.model)
}

fn push_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    out.push_str(&format!("{name} {}x{}\n", m.nrows(), m.ncols()));
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.12e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
}

/// Line-oriented dump of a model, stable across runs and suited to `diff`.
pub fn model_text(model: &MbiModel) -> String {
    let s = &model.spec;
    let mut out = format!(
        "{MODEL_FORMAT} v{MODEL_VERSION}\nG {} s {} v {} init {} seed {}\nrows {} cols {} n_obs {}\n",
        s.groups,
        s.col_factors,
        s.row_factors,
        s.init.as_str(),
        s.seed,
        model.rows,
        model.cols,
        model.n_obs
    );
    out.push_str(&format!(
        "loglik {:.12e}\nbic {:.12e}\nn_params {}\nconverged {}\niterations {}\n",
        model.loglik, model.bic, model.n_params, model.converged, model.iterations
    ));
    let hist: Vec<String> = model.loglik_history.iter().map(|l| format!("{l:.12e}")).collect();
    out.push_str(&format!("loglik_history {}\n", hist.join(" ")));
    for (g, comp) in model.components.iter().enumerate() {
        out.push_str(&format!("component {} weight {:.12e} n_eff {:.6}\n", g + 1, comp.weight, model.effective_counts[g]));
        let p = &comp.params;
        push_matrix(&mut out, "M", &p.mean);
        push_matrix(&mut out, "A", &p.a);
        push_matrix(&mut out, "B", &p.b);
        push_matrix(&mut out, "U", &DMatrix::from_column_slice(1, p.u.len(), p.u.as_slice()));
        push_matrix(&mut out, "V", &DMatrix::from_column_slice(1, p.v.len(), p.v.as_slice()));
    }
    out
}

/// Gridded `f,df,weight` rows for contour plotting, preceded by `#` metadata lines.
pub fn contour_csv(weights: &DMatrix<f64>, grid: &GridSpec, label: &str) -> String {
    let mut out = format!(
        "# label={label}\n# rows={} cols={} f_min={} f_max={} d_min={} d_max={}\nf,df,weight\n",
        grid.rows, grid.cols, grid.f_min, grid.f_max, grid.d_min, grid.d_max
    );
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            let (f, d) = grid.cell_center(i, j);
            out.push_str(&format!("{f},{d},{}\n", weights[(i, j)]));
        }
    }
    out
}

pub fn emit_contour(path: &Path, weights: &DMatrix<f64>, grid: &GridSpec, label: &str) -> Result<(), PipelineError> {
    write_text(path, &contour_csv(weights, grid, label))
}

/// Parses a contour file back into its weights and grid.
pub fn read_contour(path: &Path) -> Result<(DMatrix<f64>, GridSpec), PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut meta = std::collections::HashMap::new();
    let mut values = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if let Some(rest) = line.strip_prefix('#') {
            for kv in rest.split_whitespace() {
                if let Some((k, v)) = kv.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
        } else if !line.starts_with("f,") && !line.trim().is_empty() {
            let w = line
                .rsplit(',')
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| malformed(path, format!("bad row {line:?}")))?;
            values.push(w);
        }
    }
    let num = |k: &str| -> Result<f64, PipelineError> {
        meta.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| malformed(path, format!("missing {k}")))
    };
    let (rows, cols) = (num("rows")? as usize, num("cols")? as usize);
    let grid = GridSpec::new((num("f_min")?, num("f_max")?), (num("d_min")?, num("d_max")?), rows, cols)
        .map_err(|e| malformed(path, e.to_string()))?;
    if values.len() != rows * cols {
        return Err(malformed(path, format!("{} rows for a {rows}x{cols} grid", values.len())));
    }
    Ok((DMatrix::from_row_slice(rows, cols, &values), grid))
}

/// `participant_id,cluster` rows.
pub fn clusters_csv(ids: &[String], labels: &[usize]) -> String {
    let mut out = String::from("participant_id,cluster\n");
    for (id, l) in ids.iter().zip(labels) {
        out.push_str(&format!("{id},{l}\n"));
    }
    out
}

pub fn read_clusters(path: &Path) -> Result<Vec<(String, usize)>, PipelineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| malformed(path, e.to_string()))?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| malformed(path, e.to_string()))?;
        let id = row.get(0).unwrap_or_default().to_string();
        let label = row
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| malformed(path, format!("bad cluster label for {id}")))?;
        out.push((id, label));
    }
    Ok(out)
}
