//! Blocked dot products between row sets.
//!
//! Every output element is a plain left-to-right `f64` sum over the shared
//! dimension, so results are bitwise independent of how rows are tiled or
//! batched and match a naive sequential loop exactly.

/// Rows of the "database" side, transposed into panels of `LANES` rows.
pub(crate) const LANES: usize = 8;
const QUERY_TILE: usize = 4;

pub(crate) struct PackedRows {
    len: usize,
    dim: usize,
    /// panel p holds rows p*LANES.. as `[dim][LANES]`, zero padded
    panels: Vec<f64>,
}

impl PackedRows {
    pub(crate) fn pack<'a, I>(rows: I, len: usize, dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let n_panels = len.div_ceil(LANES);
        let mut panels = vec![0.0f64; n_panels * dim * LANES];
        let mut count = 0;
        for (r, row) in rows.into_iter().enumerate() {
            debug_assert_eq!(row.len(), dim);
            let base = (r / LANES) * dim * LANES;
            let lane = r % LANES;
            for (c, &v) in row.iter().enumerate() {
                panels[base + c * LANES + lane] = v;
            }
            count += 1;
        }
        assert_eq!(count, len, "row count does not match declared length");
        Self { len, dim, panels }
    }

    pub(crate) fn panel_count(&self) -> usize {
        self.len.div_ceil(LANES)
    }

    fn panel(&self, p: usize) -> &[f64] {
        &self.panels[p * self.dim * LANES..(p + 1) * self.dim * LANES]
    }
}

/// Dot products of `queries` (row-major, `dim` wide) against panels
/// `panels` of `db`. `out` is row-major `queries.len()/dim` by
/// `panels.len() * LANES`; lanes past `db.len()` are left as zero sums.
pub(crate) fn dot_block(
    queries: &[f64],
    db: &PackedRows,
    panels: std::ops::Range<usize>,
    out: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature was detected at runtime just above.
        unsafe { dot_block_avx512(queries, db, panels, out) };
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime just above.
        unsafe { dot_block_avx2(queries, db, panels, out) };
        return;
    }
    dot_block_generic(queries, db, panels, out);
}

// The wide paths only change register width. Fused multiply-add stays off,
// so every product and sum rounds exactly as in the baseline path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_block_avx2(
    queries: &[f64],
    db: &PackedRows,
    panels: std::ops::Range<usize>,
    out: &mut [f64],
) {
    dot_block_generic(queries, db, panels, out);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn dot_block_avx512(
    queries: &[f64],
    db: &PackedRows,
    panels: std::ops::Range<usize>,
    out: &mut [f64],
) {
    dot_block_generic(queries, db, panels, out);
}

#[inline(always)]
fn dot_block_generic(
    queries: &[f64],
    db: &PackedRows,
    panels: std::ops::Range<usize>,
    out: &mut [f64],
) {
    let dim = db.dim;
    let nq = queries.len().checked_div(dim).unwrap_or(0);
    let width = panels.len() * LANES;
    debug_assert!(out.len() >= nq * width);
    if dim == 0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }

    let mut q = 0;
    while q + QUERY_TILE <= nq {
        let rows: [&[f64]; QUERY_TILE] = std::array::from_fn(|r| &queries[(q + r) * dim..(q + r + 1) * dim]);
        for (pi, p) in panels.clone().enumerate() {
            let acc = tile(rows, db.panel(p), dim);
            for (r, lanes) in acc.iter().enumerate() {
                let at = (q + r) * width + pi * LANES;
                out[at..at + LANES].copy_from_slice(lanes);
            }
        }
        q += QUERY_TILE;
    }
    while q < nq {
        let row = &queries[q * dim..(q + 1) * dim];
        for (pi, p) in panels.clone().enumerate() {
            let [acc] = tile([row], db.panel(p), dim);
            let at = q * width + pi * LANES;
            out[at..at + LANES].copy_from_slice(&acc);
        }
        q += 1;
    }
}

/// `R` query rows against one panel, each lane summed in channel order.
#[inline(always)]
fn tile<const R: usize>(rows: [&[f64]; R], panel: &[f64], dim: usize) -> [[f64; LANES]; R] {
    let mut acc = [[0.0f64; LANES]; R];
    let rows = rows.map(|r| &r[..dim]);
    for (c, lane) in (0..dim).zip(panel[..dim * LANES].chunks_exact(LANES)) {
        let lane: &[f64; LANES] = lane.try_into().unwrap();
        for (acc, row) in acc.iter_mut().zip(&rows) {
            let qv = row[c];
            for (a, &v) in acc.iter_mut().zip(lane) {
                *a += qv * v;
            }
        }
    }
    acc
}
