//! Data ingestion, missingness masks, scaling, naive initial imputation and
//! fold splitting.
//!
//! A [`DataTable`] pairs an N×n value matrix with a boolean missingness mask
//! (`true` = missing). Observed entries are always finite; the values held
//! in missing slots are meaningless until an initializer fills them.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Identifier of the generator backing [`RngStream`].
pub const RNG_ALGORITHM: &str = "chacha8";

/// A seedable random stream with a platform-independent draw sequence.
///
/// Backed by ChaCha8; the same `(seed, stream)` pair yields the same
/// sequence on every platform and run. Independent sub-streams of one seed
/// are obtained by varying the stream id, which is how the pipeline keeps
/// masking, initialization, shuffling and fold splitting decoupled.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> RngStream {
        RngStream::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream with the same seed and a different stream id,
    /// unaffected by draws made from `self`.
    pub fn derive(&self, stream: u64) -> RngStream {
        RngStream::with_stream(self.seed, stream)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Row-major grid layout for image-mode tables: `rows × cols × channels`
/// flattened entries per table row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl GridShape {
    pub fn flat_len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    fn flat_index(&self, r: usize, c: usize, ch: usize) -> usize {
        (r * self.cols + c) * self.channels + ch
    }
}

/// An N×n matrix of values with a missingness mask (`true` = missing).
#[derive(Debug, Clone)]
pub struct DataTable {
    values: Array2<f64>,
    mask: Array2<bool>,
    column_names: Option<Vec<String>>,
    grid: Option<GridShape>,
}

impl DataTable {
    pub fn new(values: Array2<f64>, mask: Array2<bool>) -> Result<DataTable> {
        if values.dim() != mask.dim() {
            return Err(Error::ShapeMismatch {
                op: "data_table".to_string(),
                expected: format!("{:?}", values.dim()),
                got: format!("{:?}", mask.dim()),
            });
        }
        for ((i, j), &v) in values.indexed_iter() {
            if !mask[(i, j)] && !v.is_finite() {
                return Err(Error::NonFinite {
                    op: "data_table".to_string(),
                    detail: format!("observed entry at row {i}, column {j}"),
                });
            }
        }
        Ok(DataTable {
            values,
            mask,
            column_names: None,
            grid: None,
        })
    }

    /// A table with no missing entries.
    pub fn complete(values: Array2<f64>) -> Result<DataTable> {
        let mask = Array2::from_elem(values.dim(), false);
        DataTable::new(values, mask)
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<DataTable> {
        if names.len() != self.ncols() {
            return Err(Error::ShapeMismatch {
                op: "column_names".to_string(),
                expected: self.ncols().to_string(),
                got: names.len().to_string(),
            });
        }
        self.column_names = Some(names);
        Ok(self)
    }

    /// Mark the table as image-mode data laid out on the given grid.
    pub fn with_grid(mut self, grid: GridShape) -> Result<DataTable> {
        if grid.flat_len() != self.ncols() {
            return Err(Error::ShapeMismatch {
                op: "grid_shape".to_string(),
                expected: self.ncols().to_string(),
                got: grid.flat_len().to_string(),
            });
        }
        self.grid = Some(grid);
        Ok(self)
    }

    /// Replace the mask. Entries newly marked observed must hold finite
    /// values.
    pub fn with_mask(self, mask: Array2<bool>) -> Result<DataTable> {
        let mut t = DataTable::new(self.values, mask)?;
        t.column_names = self.column_names;
        t.grid = self.grid;
        Ok(t)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn grid(&self) -> Option<GridShape> {
        self.grid
    }

    pub fn n_missing(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Fraction of entries that are missing.
    pub fn missing_rate(&self) -> f64 {
        if self.mask.is_empty() {
            0.0
        } else {
            self.n_missing() as f64 / self.mask.len() as f64
        }
    }

    /// Rows restricted to the given indices, preserving metadata.
    pub fn select_rows(&self, rows: &[usize]) -> Result<DataTable> {
        let values = self.values.select(Axis(0), rows);
        let mask = self.mask.select(Axis(0), rows);
        let mut t = DataTable::new(values, mask)?;
        t.column_names = self.column_names.clone();
        t.grid = self.grid;
        Ok(t)
    }

    /// Observed values of one column, in row order.
    pub fn observed_in_column(&self, col: usize) -> Vec<f64> {
        (0..self.nrows())
            .filter(|&i| !self.mask[(i, col)])
            .map(|i| self.values[(i, col)])
            .collect()
    }
}

/// Parse one CSV cell. Empty cells and NaN tokens are missing; anything else
/// must be a finite number.
fn parse_cell(token: &str, row: usize, col: usize) -> Result<(f64, bool)> {
    let trimmed = token.trim();
    if trimmed.is_empty() {
        return Ok((f64::NAN, true));
    }
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok((v, false)),
        Ok(v) if v.is_nan() => Ok((f64::NAN, true)),
        _ => Err(Error::CellParse {
            row,
            col: col + 1,
            token: trimmed.to_string(),
        }),
    }
}

/// Load a CSV file into a [`DataTable`].
///
/// Empty cells and the token `NaN` become missing entries; every other cell
/// must parse as a finite number. Rows must all have the same number of
/// columns. Row and column numbers in errors are 1-based over data rows.
pub fn load_csv(path: &Path, has_header: bool) -> Result<DataTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::InvalidArgument(format!(
                "cannot open `{}`: {e}",
                path.display()
            )),
            _ => Error::Csv(e),
        })?;
    let column_names: Option<Vec<String>> = if has_header {
        Some(
            reader
                .headers()?
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
    } else {
        None
    };

    let mut data: Vec<f64> = Vec::new();
    let mut missing: Vec<bool> = Vec::new();
    let mut ncols: Option<usize> = None;
    let mut nrows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let width = record.len();
        match ncols {
            None => ncols = Some(width),
            Some(expected) if expected != width => {
                return Err(Error::RaggedRow {
                    row,
                    expected,
                    got: width,
                })
            }
            _ => {}
        }
        for (j, token) in record.iter().enumerate() {
            let (v, miss) = parse_cell(token, row, j)?;
            data.push(v);
            missing.push(miss);
        }
        nrows += 1;
    }
    let ncols = ncols.unwrap_or(0);
    let values = Array2::from_shape_vec((nrows, ncols), data).expect("row-major layout");
    let mask = Array2::from_shape_vec((nrows, ncols), missing).expect("row-major layout");
    let table = DataTable::new(values, mask)?;
    match column_names {
        Some(names) if ncols > 0 => table.with_column_names(names),
        _ => Ok(table),
    }
}

/// Write a 0/1 mask matrix as CSV (1 = missing).
pub fn write_mask_csv(path: &Path, mask: &Array2<bool>) -> Result<()> {
    let mut out = String::new();
    for row in mask.rows() {
        let line: Vec<&str> = row.iter().map(|&m| if m { "1" } else { "0" }).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a 0/1 mask matrix from CSV.
pub fn load_mask_csv(path: &Path, shape: (usize, usize)) -> Result<Array2<bool>> {
    let table = load_csv(path, false)?;
    if table.values().dim() != shape {
        return Err(Error::ShapeMismatch {
            op: "load_mask".to_string(),
            expected: format!("{:?}", shape),
            got: format!("{:?}", table.values().dim()),
        });
    }
    if table.n_missing() > 0 {
        return Err(Error::InvalidArgument(
            "mask file must not itself contain missing cells".to_string(),
        ));
    }
    let mut mask = Array2::from_elem(shape, false);
    for ((i, j), &v) in table.values().indexed_iter() {
        mask[(i, j)] = if v == 1.0 {
            true
        } else if v == 0.0 {
            false
        } else {
            return Err(Error::CellParse {
                row: i + 1,
                col: j + 1,
                token: v.to_string(),
            });
        };
    }
    Ok(mask)
}

/// Draw an MCAR mask: each entry is missing independently with probability
/// `rate`. With `guard` set, any row that comes out fully missing has one
/// uniformly chosen entry flipped back to observed.
pub fn generate_mcar_mask(
    shape: (usize, usize),
    rate: f64,
    rng: &mut RngStream,
    guard: bool,
) -> Result<Array2<bool>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "missing rate must lie in [0, 1], got {rate}"
        )));
    }
    let (n_rows, n_cols) = shape;
    let mut mask = Array2::from_elem(shape, false);
    for i in 0..n_rows {
        for j in 0..n_cols {
            mask[(i, j)] = rng.gen::<f64>() < rate;
        }
    }
    if guard && n_cols > 0 {
        for i in 0..n_rows {
            if (0..n_cols).all(|j| mask[(i, j)]) {
                let j = rng.gen_range(0..n_cols);
                mask[(i, j)] = false;
            }
        }
    }
    Ok(mask)
}

/// Scaling mode: per-column observed extrema, or the fixed 0..255 pixel
/// range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    Tabular,
    Image,
}

/// Per-column affine scaling parameters mapping data into [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleParams {
    pub mode: ScaleMode,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScaleParams {
    fn scale_entry(&self, col: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[col], self.max[col]);
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.5
        }
    }

    fn unscale_entry(&self, col: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[col], self.max[col]);
        if hi > lo {
            v * (hi - lo) + lo
        } else {
            lo
        }
    }

    /// Apply the scaling to a raw matrix.
    pub fn scale_matrix(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for ((_, j), v) in out.indexed_iter_mut() {
            *v = self.scale_entry(j, *v);
        }
        out
    }

    /// Invert the scaling.
    pub fn unscale_matrix(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for ((_, j), v) in out.indexed_iter_mut() {
            *v = self.unscale_entry(j, *v);
        }
        out
    }
}

/// Fit min-max scaling on the observed entries and apply it.
///
/// Tabular tables use per-column observed minima and maxima and require at
/// least one observed entry per column; image tables use the fixed pixel
/// bounds 0 and 255. Constant columns map every entry to 0.5 and unscale
/// back to the constant.
pub fn minmax_scale(table: &DataTable) -> Result<(DataTable, ScaleParams)> {
    let n = table.ncols();
    let params = match table.grid() {
        Some(_) => ScaleParams {
            mode: ScaleMode::Image,
            min: vec![0.0; n],
            max: vec![255.0; n],
        },
        None => {
            let mut min = vec![f64::INFINITY; n];
            let mut max = vec![f64::NEG_INFINITY; n];
            for ((i, j), &v) in table.values().indexed_iter() {
                if !table.mask()[(i, j)] {
                    min[j] = min[j].min(v);
                    max[j] = max[j].max(v);
                }
            }
            if let Some(col) = (0..n).find(|&j| min[j] > max[j]) {
                return Err(Error::FullyMissingColumn { col });
            }
            ScaleParams {
                mode: ScaleMode::Tabular,
                min,
                max,
            }
        }
    };
    let scaled = params.scale_matrix(table.values());
    let out = table.clone().with_values(scaled)?;
    Ok((out, params))
}

/// Invert [`minmax_scale`].
pub fn unscale(table: &DataTable, params: &ScaleParams) -> Result<DataTable> {
    let raw = params.unscale_matrix(table.values());
    table.clone().with_values(raw)
}

impl DataTable {
    fn with_values(self, values: Array2<f64>) -> Result<DataTable> {
        if values.dim() != self.mask.dim() {
            return Err(Error::ShapeMismatch {
                op: "with_values".to_string(),
                expected: format!("{:?}", self.mask.dim()),
                got: format!("{:?}", values.dim()),
            });
        }
        let mut t = DataTable::new(values, self.mask)?;
        t.column_names = self.column_names;
        t.grid = self.grid;
        Ok(t)
    }
}

/// Fill missing entries by sampling each column's empirical observed
/// distribution.
///
/// Columns are visited in order and rows in order within each column; each
/// missing entry takes a uniformly drawn observed value from its own column.
/// Observed entries pass through untouched.
pub fn init_impute_marginal(table: &DataTable, rng: &mut RngStream) -> Result<Array2<f64>> {
    let mut out = table.values().clone();
    for j in 0..table.ncols() {
        let observed = table.observed_in_column(j);
        let any_missing = (0..table.nrows()).any(|i| table.mask()[(i, j)]);
        if observed.is_empty() {
            if any_missing {
                return Err(Error::FullyMissingColumn { col: j });
            }
            continue;
        }
        for i in 0..table.nrows() {
            if table.mask()[(i, j)] {
                out[(i, j)] = observed[rng.gen_range(0..observed.len())];
            }
        }
    }
    Ok(out)
}

/// Fill missing pixels from their nearest observed neighbors.
///
/// For each missing pixel, rings of growing Chebyshev radius are searched
/// within the same channel until one contains an observed pixel, and a
/// uniform draw from that ring fills the gap. A channel with nothing
/// observed anywhere falls back to the same ring search across all
/// channels (starting at the pixel's own position), so the search
/// terminates for any image with at least one observed pixel. Neighbors
/// are "observed" per the original mask, never previously imputed values.
pub fn init_impute_nearest(table: &DataTable, rng: &mut RngStream) -> Result<Array2<f64>> {
    let grid = table.grid().ok_or_else(|| {
        Error::InvalidArgument("nearest-neighbor initialization requires a grid shape".to_string())
    })?;
    let mut out = table.values().clone();
    let max_radius = grid.rows.max(grid.cols);
    for row in 0..table.nrows() {
        let observed_any = (0..table.ncols()).any(|j| !table.mask()[(row, j)]);
        if !observed_any {
            return Err(Error::FullyMissingImage { row });
        }
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                for ch in 0..grid.channels {
                    let j = grid.flat_index(r, c, ch);
                    if !table.mask()[(row, j)] {
                        continue;
                    }
                    let mut candidates: Vec<usize> = Vec::new();
                    for radius in 1..=max_radius {
                        ring_observed(table, row, grid, r, c, Some(ch), radius, &mut candidates);
                        if !candidates.is_empty() {
                            break;
                        }
                    }
                    if candidates.is_empty() {
                        for radius in 0..=max_radius {
                            ring_observed(table, row, grid, r, c, None, radius, &mut candidates);
                            if !candidates.is_empty() {
                                break;
                            }
                        }
                    }
                    debug_assert!(!candidates.is_empty(), "image has an observed pixel");
                    let pick = candidates[rng.gen_range(0..candidates.len())];
                    out[(row, j)] = table.values()[(row, pick)];
                }
            }
        }
    }
    Ok(out)
}

/// Collect observed flat indices on the Chebyshev ring of the given radius,
/// in one channel or (`channel = None`) across all of them.
fn ring_observed(
    table: &DataTable,
    row: usize,
    grid: GridShape,
    r: usize,
    c: usize,
    channel: Option<usize>,
    radius: usize,
    candidates: &mut Vec<usize>,
) {
    candidates.clear();
    let radius = radius as isize;
    let (r, c) = (r as isize, c as isize);
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            if dr.abs().max(dc.abs()) != radius {
                continue;
            }
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= grid.rows as isize || nc >= grid.cols as isize {
                continue;
            }
            let channels: Vec<usize> = match channel {
                Some(ch) => vec![ch],
                None => (0..grid.channels).collect(),
            };
            for ch in channels {
                let j = grid.flat_index(nr as usize, nc as usize, ch);
                if !table.mask()[(row, j)] {
                    candidates.push(j);
                }
            }
        }
    }
}

/// Naive initial-imputation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    /// Sample each column's empirical observed distribution (tabular data).
    Marginal,
    /// Sample the nearest observed neighbors of each missing pixel
    /// (grid-shaped data).
    Nearest,
}

impl InitMethod {
    pub fn apply(&self, table: &DataTable, rng: &mut RngStream) -> Result<Array2<f64>> {
        match self {
            InitMethod::Marginal => init_impute_marginal(table, rng),
            InitMethod::Nearest => init_impute_nearest(table, rng),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitMethod::Marginal => "marginal",
            InitMethod::Nearest => "nearest",
        }
    }

    pub fn parse(s: &str) -> Result<InitMethod> {
        match s {
            "marginal" => Ok(InitMethod::Marginal),
            "nearest" => Ok(InitMethod::Nearest),
            other => Err(Error::InvalidArgument(format!(
                "unknown initializer `{other}` (expected `marginal` or `nearest`)"
            ))),
        }
    }
}

/// Split `0..n_rows` into `k` disjoint folds whose sizes differ by at most
/// one, shuffled by the given stream.
pub fn kfold_split(n_rows: usize, k: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross validation needs at least 2 folds, got {k}"
        )));
    }
    if k > n_rows {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n_rows} rows into {k} folds"
        )));
    }
    let mut indices: Vec<usize> = (0..n_rows).collect();
    // Fisher-Yates, driven directly by the stream for cross-version stability.
    for i in (1..n_rows).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let base = n_rows / k;
    let extra = n_rows % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(indices[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_csv_empty_cell_is_missing() {
        let f = write_temp("1.0,,3.0\n");
        let t = load_csv(f.path(), false).unwrap();
        assert_eq!(t.values()[(0, 0)], 1.0);
        assert!(t.mask()[(0, 1)]);
        assert!(!t.mask()[(0, 0)]);
        assert!(!t.mask()[(0, 2)]);
        assert_eq!(t.values()[(0, 2)], 3.0);
    }

    #[test]
    fn load_csv_fully_populated_has_zero_mask() {
        let f = write_temp("1,2\n3,4\n");
        let t = load_csv(f.path(), false).unwrap();
        assert_eq!(t.n_missing(), 0);
    }

    #[test]
    fn load_csv_nan_token_is_missing() {
        let f = write_temp("NaN,2.0\n");
        let t = load_csv(f.path(), false).unwrap();
        assert!(t.mask()[(0, 0)]);
        assert!(!t.mask()[(0, 1)]);
    }

    #[test]
    fn load_csv_bad_cell_names_column() {
        let f = write_temp("1.0,abc\n");
        let err = load_csv(f.path(), false).unwrap_err();
        match err {
            Error::CellParse { row, col, token } => {
                assert_eq!(row, 1);
                assert_eq!(col, 2);
                assert_eq!(token, "abc");
            }
            other => panic!("expected CellParse, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_ragged_row_names_row() {
        let f = write_temp("1,2,3\n4,5\n");
        let err = load_csv(f.path(), false).unwrap_err();
        match err {
            Error::RaggedRow { row, expected, got } => {
                assert_eq!(row, 2);
                assert_eq!(expected, 3);
                assert_eq!(got, 2);
            }
            other => panic!("expected RaggedRow, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_infinite_cell_is_rejected() {
        let f = write_temp("inf,2.0\n");
        assert!(load_csv(f.path(), false).is_err());
    }

    #[test]
    fn mcar_rate_zero_and_one() {
        let mut rng = RngStream::new(7);
        let zero = generate_mcar_mask((5, 4), 0.0, &mut rng, false).unwrap();
        assert!(zero.iter().all(|&m| !m));
        let one = generate_mcar_mask((5, 4), 1.0, &mut rng, false).unwrap();
        assert!(one.iter().all(|&m| m));
    }

    #[test]
    fn mcar_rate_out_of_range_is_rejected() {
        let mut rng = RngStream::new(7);
        assert!(generate_mcar_mask((2, 2), 1.5, &mut rng, false).is_err());
        assert!(generate_mcar_mask((2, 2), -0.1, &mut rng, false).is_err());
    }

    #[test]
    fn mcar_realized_fraction_near_rate() {
        // 12-sigma band around 0.2 on a million entries.
        let mut rng = RngStream::new(11);
        let mask = generate_mcar_mask((1000, 1000), 0.2, &mut rng, false).unwrap();
        let frac = mask.iter().filter(|&&m| m).count() as f64 / 1e6;
        assert!((0.195..=0.205).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn mcar_guard_leaves_no_empty_rows() {
        let mut rng = RngStream::new(3);
        let mask = generate_mcar_mask((200, 3), 0.95, &mut rng, true).unwrap();
        for row in mask.rows() {
            assert!(row.iter().any(|&m| !m));
        }
    }

    #[test]
    fn mcar_same_stream_is_reproducible() {
        let a = generate_mcar_mask((20, 5), 0.3, &mut RngStream::new(42), false).unwrap();
        let b = generate_mcar_mask((20, 5), 0.3, &mut RngStream::new(42), false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scale_maps_observed_column() {
        let values = array![[2.0], [4.0], [10.0]];
        let t = DataTable::complete(values).unwrap();
        let (scaled, params) = minmax_scale(&t).unwrap();
        assert_relative_eq!(scaled.values()[(0, 0)], 0.0);
        assert_relative_eq!(scaled.values()[(1, 0)], 0.25);
        assert_relative_eq!(scaled.values()[(2, 0)], 1.0);
        let back = unscale(&scaled, &params).unwrap();
        for (a, b) in back.values().iter().zip(t.values().iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn scale_image_mode_uses_pixel_bounds() {
        let values = array![[0.0, 255.0, 128.0, 64.0]];
        let t = DataTable::complete(values)
            .unwrap()
            .with_grid(GridShape {
                rows: 2,
                cols: 2,
                channels: 1,
            })
            .unwrap();
        let (scaled, params) = minmax_scale(&t).unwrap();
        assert_eq!(params.mode, ScaleMode::Image);
        assert_relative_eq!(scaled.values()[(0, 0)], 0.0);
        assert_relative_eq!(scaled.values()[(0, 1)], 1.0);
    }

    #[test]
    fn scale_constant_column_maps_to_half() {
        let values = array![[7.0], [7.0], [7.0]];
        let t = DataTable::complete(values).unwrap();
        let (scaled, params) = minmax_scale(&t).unwrap();
        assert!(scaled.values().iter().all(|&v| v == 0.5));
        let back = unscale(&scaled, &params).unwrap();
        assert!(back.values().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn scale_fully_missing_column_errors() {
        let values = array![[1.0, f64::NAN], [2.0, f64::NAN]];
        let mask = array![[false, true], [false, true]];
        let t = DataTable::new(values, mask).unwrap();
        match minmax_scale(&t).unwrap_err() {
            Error::FullyMissingColumn { col } => assert_eq!(col, 1),
            other => panic!("expected FullyMissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn scale_uses_observed_entries_only() {
        // The missing slot holds a huge placeholder that must not leak into
        // the fitted range.
        let values = array![[1.0, 0.0], [3.0, 1e9], [2.0, 2.0]];
        let mask = array![[false, false], [false, true], [false, false]];
        let t = DataTable::new(values, mask).unwrap();
        let (_, params) = minmax_scale(&t).unwrap();
        assert_eq!(params.max[1], 2.0);
    }

    #[test]
    fn marginal_draws_from_observed_support() {
        let values = array![[1.0], [2.0], [3.0], [f64::NAN]];
        let mask = array![[false], [false], [false], [true]];
        let t = DataTable::new(values, mask).unwrap();
        let mut rng = RngStream::new(5);
        for _ in 0..20 {
            let filled = init_impute_marginal(&t, &mut rng).unwrap();
            let v = filled[(3, 0)];
            assert!(v == 1.0 || v == 2.0 || v == 3.0, "drew {v}");
        }
    }

    #[test]
    fn marginal_singleton_support() {
        let values = array![[7.0], [f64::NAN]];
        let mask = array![[false], [true]];
        let t = DataTable::new(values, mask).unwrap();
        let filled = init_impute_marginal(&t, &mut RngStream::new(0)).unwrap();
        assert_eq!(filled[(1, 0)], 7.0);
    }

    #[test]
    fn marginal_preserves_observed_entries() {
        let values = array![[1.5, f64::NAN], [f64::NAN, 4.0]];
        let mask = array![[false, true], [true, false]];
        let t = DataTable::new(values, mask).unwrap();
        let filled = init_impute_marginal(&t, &mut RngStream::new(9)).unwrap();
        assert_eq!(filled[(0, 0)].to_bits(), 1.5f64.to_bits());
        assert_eq!(filled[(1, 1)].to_bits(), 4.0f64.to_bits());
    }

    #[test]
    fn marginal_empty_column_errors() {
        let values = array![[f64::NAN], [f64::NAN]];
        let mask = array![[true], [true]];
        let t = DataTable::new(values, mask).unwrap();
        assert!(matches!(
            init_impute_marginal(&t, &mut RngStream::new(0)),
            Err(Error::FullyMissingColumn { col: 0 })
        ));
    }

    #[test]
    fn nearest_uses_eight_neighborhood_first() {
        // 3x3 grid, center missing, all neighbors observed.
        let mut values = Array2::from_elem((1, 9), 0.0);
        for (j, v) in [10.0, 20.0, 30.0, 40.0, 0.0, 50.0, 60.0, 70.0, 80.0]
            .iter()
            .enumerate()
        {
            values[(0, j)] = *v;
        }
        let mut mask = Array2::from_elem((1, 9), false);
        mask[(0, 4)] = true;
        let t = DataTable::new(values, mask)
            .unwrap()
            .with_grid(GridShape {
                rows: 3,
                cols: 3,
                channels: 1,
            })
            .unwrap();
        let filled = init_impute_nearest(&t, &mut RngStream::new(1)).unwrap();
        let v = filled[(0, 4)];
        assert!([10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0].contains(&v));
    }

    #[test]
    fn nearest_fully_observed_is_untouched() {
        let values = Array2::from_shape_fn((1, 4), |(_, j)| j as f64);
        let t = DataTable::complete(values.clone())
            .unwrap()
            .with_grid(GridShape {
                rows: 2,
                cols: 2,
                channels: 1,
            })
            .unwrap();
        let filled = init_impute_nearest(&t, &mut RngStream::new(1)).unwrap();
        assert_eq!(filled, values);
    }

    #[test]
    fn nearest_single_observed_pixel_fills_everything() {
        let mut values = Array2::from_elem((1, 16), f64::NAN);
        values[(0, 5)] = 9.5;
        let mut mask = Array2::from_elem((1, 16), true);
        mask[(0, 5)] = false;
        let t = DataTable::new(values, mask)
            .unwrap()
            .with_grid(GridShape {
                rows: 4,
                cols: 4,
                channels: 1,
            })
            .unwrap();
        let filled = init_impute_nearest(&t, &mut RngStream::new(1)).unwrap();
        assert!(filled.iter().all(|&v| v == 9.5));
    }

    #[test]
    fn nearest_falls_back_across_a_fully_missing_channel() {
        // Channel 0 has nothing observed anywhere; its pixels must borrow
        // from the other channel rather than starving the ring search.
        let values = array![[f64::NAN, 5.0, f64::NAN, 6.0]];
        let mask = array![[true, false, true, false]];
        let t = DataTable::new(values, mask)
            .unwrap()
            .with_grid(GridShape {
                rows: 1,
                cols: 2,
                channels: 2,
            })
            .unwrap();
        let filled = init_impute_nearest(&t, &mut RngStream::new(1)).unwrap();
        for &v in filled.iter() {
            assert!(v == 5.0 || v == 6.0);
        }
    }

    #[test]
    fn nearest_fully_missing_image_errors() {
        let values = Array2::from_elem((1, 4), f64::NAN);
        let mask = Array2::from_elem((1, 4), true);
        let t = DataTable::new(values, mask)
            .unwrap()
            .with_grid(GridShape {
                rows: 2,
                cols: 2,
                channels: 1,
            })
            .unwrap();
        assert!(matches!(
            init_impute_nearest(&t, &mut RngStream::new(1)),
            Err(Error::FullyMissingImage { row: 0 })
        ));
    }

    #[test]
    fn kfold_partitions_all_indices() {
        let folds = kfold_split(10, 5, &mut RngStream::new(2)).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn kfold_uneven_sizes() {
        let folds = kfold_split(7, 5, &mut RngStream::new(2)).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 2, 2]);
    }

    #[test]
    fn kfold_same_seed_identical() {
        let a = kfold_split(23, 4, &mut RngStream::new(13)).unwrap();
        let b = kfold_split(23, 4, &mut RngStream::new(13)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kfold_too_many_folds_errors() {
        assert!(kfold_split(3, 5, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn mask_generation_ignores_values() {
        // Identical streams produce identical masks regardless of the table
        // contents the caller pairs them with.
        let m1 = generate_mcar_mask((8, 3), 0.4, &mut RngStream::new(77), false).unwrap();
        let m2 = generate_mcar_mask((8, 3), 0.4, &mut RngStream::new(77), false).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn derived_streams_are_independent_of_draw_position() {
        let mut a = RngStream::new(5);
        let _ = a.gen::<f64>();
        let d1 = a.derive(9).gen::<u64>();
        let d2 = RngStream::new(5).derive(9).gen::<u64>();
        assert_eq!(d1, d2);
    }
}
