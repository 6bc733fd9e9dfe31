use super::transform::resize;
use super::RasterImage;
use crate::error::{Error, Result};

/// One labeled cell of an `n`x`n` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub label: String,
    pub row: usize,
    pub col: usize,
    pub pixels: RasterImage,
}

/// Rows are lettered top-down (`A`..`Z`, then `AA`, `AB`, ...), columns
/// numbered left-right from 1.
pub fn grid_label(row: usize, col: usize) -> String {
    let mut letters = Vec::new();
    let mut r = row + 1;
    while r > 0 {
        r -= 1;
        letters.push(b'A' + (r % 26) as u8);
        r /= 26;
    }
    letters.reverse();
    format!("{}{}", String::from_utf8(letters).expect("ascii"), col + 1)
}

/// Inverse of [`grid_label`], case-insensitive. Returns `None` for malformed
/// labels or cells outside the `n`x`n` grid.
pub fn parse_grid_label(label: &str, n: usize) -> Option<(usize, usize)> {
    let split = label.find(|c: char| !c.is_ascii_alphabetic())?;
    let (letters, digits) = label.split_at(split);
    if letters.is_empty() || digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut row = 0usize;
    for b in letters.bytes() {
        row = row.checked_mul(26)?.checked_add((b.to_ascii_uppercase() - b'A') as usize + 1)?;
    }
    let col: usize = digits.parse().ok()?;
    if col == 0 || row > n || col > n {
        return None;
    }
    Some((row - 1, col - 1))
}

fn check_grid(img: &RasterImage, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("grid dimension must be at least 1".into()));
    }
    if n > img.width().min(img.height()) {
        return Err(Error::InvalidArgument(format!(
            "grid dimension {n} exceeds image size {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

pub(crate) fn grid_aligned_dims(width: usize, height: usize, n: usize) -> (usize, usize) {
    (width - width % n, height - height % n)
}

/// Splits into `n`² equal patches in row-major order. Dimensions that are not
/// multiples of `n` are first resized down to the nearest multiple.
pub fn split_patches(img: &RasterImage, n: usize) -> Result<Vec<Patch>> {
    check_grid(img, n)?;
    let (w, h) = grid_aligned_dims(img.width(), img.height(), n);
    let resized;
    let src = if (w, h) == (img.width(), img.height()) {
        img
    } else {
        resized = resize(img, w, h)?;
        &resized
    };
    let (pw, ph) = (w / n, h / n);
    let mut patches = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            patches.push(Patch {
                label: grid_label(row, col),
                row,
                col,
                pixels: src.crop(col * pw, row * ph, pw, ph)?,
            });
        }
    }
    Ok(patches)
}

pub(crate) fn validate_grid(img: &RasterImage, n: usize) -> Result<()> {
    check_grid(img, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: usize, h: usize) -> RasterImage {
        let data = (0..w * h * 3).map(|i| (i * 7 % 251) as u8).collect();
        RasterImage::new(w, h, data).unwrap()
    }

    #[test]
    fn labels_follow_row_letter_column_number() {
        assert_eq!(grid_label(0, 0), "A1");
        assert_eq!(grid_label(1, 2), "B3");
        assert_eq!(grid_label(3, 3), "D4");
        assert_eq!(grid_label(25, 0), "Z1");
        assert_eq!(grid_label(26, 9), "AA10");
        assert_eq!(parse_grid_label("b3", 4), Some((1, 2)));
        assert_eq!(parse_grid_label("AA10", 30), Some((26, 9)));
        assert_eq!(parse_grid_label("Z9", 4), None);
        assert_eq!(parse_grid_label("A0", 4), None);
        assert_eq!(parse_grid_label("3B", 4), None);
    }

    #[test]
    fn grid_of_sixteen() {
        let patches = split_patches(&gradient(512, 512), 4).unwrap();
        assert_eq!(patches.len(), 16);
        assert_eq!(patches[6].label, "B3");
        assert!(patches.iter().all(|p| p.pixels.width() == 128 && p.pixels.height() == 128));
    }

    #[test]
    fn single_cell_is_whole_image() {
        let img = gradient(13, 7);
        let patches = split_patches(&img, 1).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].label, "A1");
        assert_eq!(patches[0].pixels, img);
    }

    #[test]
    fn non_divisible_dims_resize_down() {
        let patches = split_patches(&gradient(513, 511), 4).unwrap();
        assert_eq!((patches[0].pixels.width(), patches[0].pixels.height()), (128, 127));
    }

    #[test]
    fn oversized_grid_is_rejected() {
        assert!(split_patches(&gradient(3, 8), 4).is_err());
        assert!(split_patches(&gradient(3, 8), 0).is_err());
    }

    proptest! {
        #[test]
        fn reassembly_reproduces_image(w in 1usize..24, h in 1usize..24, n in 1usize..6) {
            prop_assume!(n <= w.min(h));
            let img = gradient(w, h);
            let patches = split_patches(&img, n).unwrap();
            prop_assert_eq!(patches.len(), n * n);
            let (pw, ph) = (patches[0].pixels.width(), patches[0].pixels.height());
            prop_assert!(patches.iter().all(|p| p.pixels.width() == pw && p.pixels.height() == ph));
            let (aw, ah) = grid_aligned_dims(w, h, n);
            let base = if (aw, ah) == (w, h) { img } else { resize(&img, aw, ah).unwrap() };
            let mut rebuilt = RasterImage::filled(aw, ah, [0, 0, 0]).unwrap();
            for p in &patches {
                for y in 0..ph {
                    for x in 0..pw {
                        rebuilt.set_pixel(p.col * pw + x, p.row * ph + y, p.pixels.pixel(x, y));
                    }
                }
            }
            prop_assert_eq!(rebuilt, base);
        }
    }
}
