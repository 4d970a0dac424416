//! Mean pooling of maps for transport.

use super::api::MapPayload;

/// Pools an `nx x ny` field to at most `max_side` cells per side. Output cell
/// `i` averages input rows `floor(i*nx/out) .. floor((i+1)*nx/out)`, so
/// non-divisible sizes are covered without gaps or overlap.
pub fn mean_pool(values: &[f64], nx: usize, ny: usize, max_side: usize) -> MapPayload {
    assert_eq!(values.len(), nx * ny, "field size");
    let (ox, oy) = (nx.min(max_side), ny.min(max_side));
    let mut out = Vec::with_capacity(ox * oy);
    for i in 0..ox {
        let (x0, x1) = (i * nx / ox, (i + 1) * nx / ox);
        for j in 0..oy {
            let (y0, y1) = (j * ny / oy, (j + 1) * ny / oy);
            let mut acc = 0.0;
            for x in x0..x1 {
                acc += values[x * ny + y0..x * ny + y1].iter().sum::<f64>();
            }
            out.push(acc / ((x1 - x0) * (y1 - y0)) as f64);
        }
    }
    MapPayload {
        nx: ox,
        ny: oy,
        values: out,
    }
}
