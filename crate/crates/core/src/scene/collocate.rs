use super::GridGeometry;

/// Nearest-neighbour mapping from each destination pixel to a source pixel
/// index (row-major), or `None` when the destination center falls outside
/// the source grid or on an invalid source pixel.
pub fn collocate_grid(src: &GridGeometry, src_valid: &[bool], dst: &GridGeometry) -> Vec<Option<usize>> {
    debug_assert_eq!(src_valid.len(), src.pixel_count());
    let mut out = Vec::with_capacity(dst.pixel_count());
    for r in 0..dst.height {
        for c in 0..dst.width {
            let (x, y) = dst.geotransform.pixel_center(r, c);
            let hit = src.geotransform.invert(x, y).ok().and_then(|(sc, sr)| {
                let (sc, sr) = (sc.floor(), sr.floor());
                if sc < 0.0 || sr < 0.0 || sc >= src.width as f64 || sr >= src.height as f64 {
                    return None;
                }
                let idx = sr as usize * src.width + sc as usize;
                src_valid[idx].then_some(idx)
            });
            out.push(hit);
        }
    }
    out
}
