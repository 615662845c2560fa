//! Overlapping square patches: extraction with reflected borders,
//! unit-norm normalization, and aggregation back into an image.

use crate::error::{Error, Result};
use crate::image::Image;

/// Borrowed view of one normalized patch.
#[derive(Debug, Clone, Copy)]
pub struct Patch<'a> {
    pub index: usize,
    /// (row, col) of the center pixel in the original image.
    pub center: (usize, usize),
    /// Euclidean norm of the raw patch before normalization.
    pub norm: f64,
    /// Unit-norm patch, row-major, or all zeros when `norm == 0`.
    pub values: &'a [f64],
}

/// One patch per pixel, stored contiguously (`K × N²`).
#[derive(Debug, Clone)]
pub struct PatchSet {
    size: usize,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    norms: Vec<f64>,
}

impl PatchSet {
    /// Patch side `N`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Vector length `N²`.
    pub fn dim(&self) -> usize {
        self.size * self.size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of patches `K = R·C`.
    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn values(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.values[k * d..(k + 1) * d]
    }

    pub fn patch(&self, k: usize) -> Patch<'_> {
        Patch {
            index: k,
            center: (k / self.cols, k % self.cols),
            norm: self.norms[k],
            values: self.values(k),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Patch<'_>> + '_ {
        (0..self.len()).map(move |k| self.patch(k))
    }
}

/// Checks that `size` is an odd patch side usable on a `rows`×`cols` image.
pub fn validate_patch_size(size: usize, rows: usize, cols: usize) -> Result<()> {
    let reason = if size.is_multiple_of(2) {
        Some("patch side must be odd".to_string())
    } else if size < 3 {
        Some("patch side must be at least 3".to_string())
    } else if size > rows.min(cols) {
        Some(format!("patch side exceeds image size {rows}x{cols}"))
    } else {
        None
    };
    match reason {
        Some(reason) => Err(Error::InvalidPatchSize { size, reason }),
        None => Ok(()),
    }
}

/// Mirror index into `0..n` without repeating the edge sample (`-1 -> 1`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&r));
    r as usize
}

/// Scales `v` to unit Euclidean norm. Zero vectors are returned unchanged.
pub fn normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm != 0.0 {
        (v.iter().map(|x| x / norm).collect(), norm)
    } else {
        (v.to_vec(), 0.0)
    }
}

/// Inverse of [`normalize`].
pub fn denormalize(v: &[f64], norm: f64) -> Vec<f64> {
    if norm != 0.0 {
        v.iter().map(|x| x * norm).collect()
    } else {
        v.to_vec()
    }
}

/// Extracts the reflected-border `N×N` patch around every pixel.
pub fn extract_patches(img: &Image, size: usize) -> Result<PatchSet> {
    validate_patch_size(size, img.rows(), img.cols())?;
    let (rows, cols) = (img.rows(), img.cols());
    let half = (size / 2) as isize;
    let dim = size * size;
    let mut values = Vec::with_capacity(rows * cols * dim);
    let mut norms = Vec::with_capacity(rows * cols);
    let mut raw = vec![0.0; dim];
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let mut i = 0;
            for dr in -half..=half {
                let rr = reflect(r + dr, rows);
                for dc in -half..=half {
                    raw[i] = img.get(rr, reflect(c + dc, cols));
                    i += 1;
                }
            }
            let (unit, norm) = normalize(&raw);
            values.extend_from_slice(&unit);
            norms.push(norm);
        }
    }
    Ok(PatchSet {
        size,
        rows,
        cols,
        values,
        norms,
    })
}

/// Averages overlapping patch estimates into a `rows`×`cols` image.
///
/// Estimate `k` is centered on pixel `k` (row-major). Entries that fall in
/// the padded border are dropped, so each pixel is the mean of the patch
/// entries that actually cover it. Summation runs in patch-index order.
pub fn aggregate<V: AsRef<[f64]>>(
    estimates: &[V],
    rows: usize,
    cols: usize,
    size: usize,
) -> Result<Image> {
    if estimates.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "{} patch estimates for a {rows}x{cols} image",
            estimates.len()
        )));
    }
    if size.is_multiple_of(2) || size == 0 {
        return Err(Error::InvalidPatchSize {
            size,
            reason: "patch side must be odd".into(),
        });
    }
    let half = (size / 2) as isize;
    let mut sum = vec![0.0; rows * cols];
    let mut count = vec![0u32; rows * cols];
    for (k, est) in estimates.iter().enumerate() {
        let est = est.as_ref();
        if est.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "patch estimate {k} has length {}, expected {}",
                est.len(),
                size * size
            )));
        }
        let (r0, c0) = ((k / cols) as isize, (k % cols) as isize);
        let mut i = 0;
        for dr in -half..=half {
            let r = r0 + dr;
            for dc in -half..=half {
                let c = c0 + dc;
                if r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols {
                    let p = r as usize * cols + c as usize;
                    sum[p] += est[i];
                    count[p] += 1;
                }
                i += 1;
            }
        }
    }
    let pixels = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    Image::new(rows, cols, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Reflect padding computed by building the padded image explicitly.
    fn padded_reference(img: &Image, half: usize) -> Vec<Vec<f64>> {
        let (rows, cols) = (img.rows(), img.cols());
        let mirror = |i: isize, n: usize| -> usize {
            let period = 2 * (n as isize - 1);
            let m = i.rem_euclid(period);
            if m < n as isize {
                m as usize
            } else {
                (period - m) as usize
            }
        };
        (0..rows + 2 * half)
            .map(|pr| {
                (0..cols + 2 * half)
                    .map(|pc| {
                        img.get(
                            mirror(pr as isize - half as isize, rows),
                            mirror(pc as isize - half as isize, cols),
                        )
                    })
                    .collect()
            })
            .collect()
    }

    fn raw_patch(ps: &PatchSet, k: usize) -> Vec<f64> {
        denormalize(ps.values(k), ps.norms()[k])
    }

    #[test]
    fn patch_count_is_pixel_count() {
        let img = Image::from_fn(4, 4, |r, c| (r + c) as f64).unwrap();
        let ps = extract_patches(&img, 3).unwrap();
        assert_eq!(ps.len(), 16);
        assert!(ps.iter().all(|p| p.values.len() == 9));
    }

    #[test]
    fn corner_patch_uses_reflection() {
        let img = Image::from_fn(3, 3, |r, c| (r * 3 + c + 1) as f64).unwrap();
        let ps = extract_patches(&img, 3).unwrap();
        let corner = raw_patch(&ps, 0);
        let expected = [5.0, 4.0, 5.0, 2.0, 1.0, 2.0, 5.0, 4.0, 5.0];
        for (a, b) in corner.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let padded = padded_reference(&img, 1);
        let from_ref: Vec<f64> = (0..3).flat_map(|r| padded[r][0..3].to_vec()).collect();
        assert_eq!(from_ref, expected.to_vec());
    }

    #[test]
    fn extraction_matches_padded_reference() {
        let img = Image::from_fn(7, 9, |r, c| ((r * 31 + c * 17) % 23) as f64).unwrap();
        for size in [3, 5, 7] {
            let half = size / 2;
            let padded = padded_reference(&img, half);
            let ps = extract_patches(&img, size).unwrap();
            for k in 0..ps.len() {
                let (r, c) = ps.patch(k).center;
                let expected: Vec<f64> = (0..size)
                    .flat_map(|dr| padded[r + dr][c..c + size].to_vec())
                    .collect();
                for (a, b) in raw_patch(&ps, k).iter().zip(&expected) {
                    assert!((a - b).abs() < 1e-9, "size {size} patch {k}");
                }
            }
        }
    }

    #[test]
    fn constant_image_patches() {
        let img = Image::filled(6, 6, 12.0).unwrap();
        let ps = extract_patches(&img, 5).unwrap();
        for p in ps.iter() {
            assert!((p.norm - 12.0 * 5.0).abs() < 1e-12);
            assert!(p.values.iter().all(|v| (v - 0.2).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_patch_stays_zero() {
        let img = Image::filled(5, 5, 0.0).unwrap();
        let ps = extract_patches(&img, 3).unwrap();
        assert!(ps
            .iter()
            .all(|p| p.norm == 0.0 && p.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_bad_sizes() {
        let img = Image::filled(5, 8, 1.0).unwrap();
        for size in [0, 1, 2, 4, 7] {
            assert!(matches!(
                extract_patches(&img, size),
                Err(Error::InvalidPatchSize { .. })
            ));
        }
        assert!(extract_patches(&img, 5).is_ok());
    }

    #[test]
    fn normalize_examples() {
        let (u, n) = normalize(&[3.0, 4.0]);
        assert_eq!(n, 5.0);
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);
        assert_eq!(normalize(&[0.0, 0.0]), (vec![0.0, 0.0], 0.0));
        let (u, n) = normalize(&[0.0, 1.0, 0.0]);
        assert_eq!((u, n), (vec![0.0, 1.0, 0.0], 1.0));
        assert_eq!(denormalize(&[0.6, 0.8], 5.0), vec![3.0, 4.0]);
        assert_eq!(denormalize(&[0.1, 0.2], 0.0), vec![0.1, 0.2]);
    }

    #[test]
    fn interior_pixels_get_full_coverage() {
        let (rows, cols, size) = (9, 9, 5);
        let ones = vec![vec![1.0; size * size]; rows * cols];
        // count contributions by aggregating indicator estimates
        let mut hits = vec![0usize; rows * cols];
        let half = size as isize / 2;
        for k in 0..rows * cols {
            let (r0, c0) = ((k / cols) as isize, (k % cols) as isize);
            for dr in -half..=half {
                for dc in -half..=half {
                    let (r, c) = (r0 + dr, c0 + dc);
                    if r >= 0 && c >= 0 && r < rows as isize && c < cols as isize {
                        hits[r as usize * cols + c as usize] += 1;
                    }
                }
            }
        }
        assert_eq!(hits[4 * cols + 4], size * size);
        assert_eq!(hits[0], 9);
        let agg = aggregate(&ones, rows, cols, size).unwrap();
        assert!(agg.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn aggregate_dimension_errors() {
        let est = vec![vec![0.0; 9]; 15];
        assert!(matches!(
            aggregate(&est, 4, 4, 3),
            Err(Error::DimensionMismatch(_))
        ));
        let est = vec![vec![0.0; 8]; 16];
        assert!(matches!(
            aggregate(&est, 4, 4, 3),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn constant_estimates_give_constant_image() {
        let img = Image::filled(7, 6, 99.0).unwrap();
        let ps = extract_patches(&img, 3).unwrap();
        let est: Vec<Vec<f64>> = (0..ps.len()).map(|k| raw_patch(&ps, k)).collect();
        let out = aggregate(&est, 7, 6, 3).unwrap();
        assert!(out.pixels().iter().all(|v| (v - 99.0).abs() < 1e-10));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            pixels in proptest::collection::vec(0.0f64..255.0, 64),
            size in prop::sample::select(vec![3usize, 5, 7]),
        ) {
            let img = Image::new(8, 8, pixels).unwrap();
            let ps = extract_patches(&img, size).unwrap();
            let est: Vec<Vec<f64>> = (0..ps.len()).map(|k| raw_patch(&ps, k)).collect();
            let out = aggregate(&est, 8, 8, size).unwrap();
            for (a, b) in out.pixels().iter().zip(img.pixels()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn scaling_preserves_unit_vectors(
            pixels in proptest::collection::vec(0.0f64..255.0, 36),
            scale in 0.1f64..10.0,
        ) {
            let img = Image::new(6, 6, pixels).unwrap();
            let a = extract_patches(&img, 3).unwrap();
            let b = extract_patches(&img.map(|v| v * scale), 3).unwrap();
            for k in 0..a.len() {
                prop_assert!((b.norms()[k] - scale * a.norms()[k]).abs() <= 1e-9 * (1.0 + b.norms()[k]));
                for (x, y) in a.values(k).iter().zip(b.values(k)) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
