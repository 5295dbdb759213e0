use crate::tape::TensorError;

pub const MAX_RANK: usize = 4;

/// Dense row-major shape, rank <= 4.
pub type Shape = Vec<usize>;

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Right-aligned broadcast of two shapes (trailing-dimension rules: each
/// aligned pair must be equal or contain a 1; missing leading dims count as 1).
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Shape, TensorError> {
    let rank = a.len().max(b.len());
    if rank > MAX_RANK {
        return Err(TensorError::RankTooHigh(rank));
    }
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast",
                a: a.to_vec(),
                b: b.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Row-major strides for `shape` as seen from an `out`-shaped iteration,
/// with stride 0 on broadcast dimensions.
pub fn broadcast_strides(shape: &[usize], out: &[usize]) -> [usize; MAX_RANK] {
    let mut strides = [0usize; MAX_RANK];
    let offset = out.len() - shape.len();
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        let s = if shape[i] == 1 { 0 } else { acc };
        strides[i + offset] = s;
        acc *= shape[i];
    }
    strides
}
