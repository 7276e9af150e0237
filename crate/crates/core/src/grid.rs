//! Square sampling grid whose inscribed circle is the unit pupil disk.

/// Pixel-center coordinates of an `n × n` grid spanning `[-1, 1]²`.
///
/// Pixel `(row, col)` is stored at `row * n + col`; `x` runs along columns and
/// `y` along rows. Pixel centers sit at half-integer offsets, so the grid is
/// symmetric under 90° rotations and the disk mask contains no pixel on the
/// exact rim.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilGrid {
    size: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    mask: Vec<bool>,
    inside: Vec<usize>,
}

impl PupilGrid {
    pub fn new(size: usize) -> Self {
        let half = size as f64 / 2.0;
        let coord = |i: usize| (i as f64 + 0.5 - half) / half;
        let mut x = Vec::with_capacity(size * size);
        let mut y = Vec::with_capacity(size * size);
        let mut mask = Vec::with_capacity(size * size);
        let mut inside = Vec::new();
        for row in 0..size {
            for col in 0..size {
                let (px, py) = (coord(col), coord(row));
                let on_disk = px * px + py * py <= 1.0;
                if on_disk {
                    inside.push(row * size + col);
                }
                x.push(px);
                y.push(py);
                mask.push(on_disk);
            }
        }
        PupilGrid {
            size,
            x,
            y,
            mask,
            inside,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.size * self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Normalized x coordinate of every pixel, row-major.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Row-major indices of the pixels on the disk.
    pub fn inside(&self) -> &[usize] {
        &self.inside
    }

    /// Number of pixels on the disk, i.e. the discrete pupil area.
    pub fn area(&self) -> usize {
        self.inside.len()
    }

    /// Polar coordinates `(rho, theta)` of pixel `idx`.
    pub fn polar(&self, idx: usize) -> (f64, f64) {
        let (x, y) = (self.x[idx], self.y[idx]);
        (x.hypot(y), y.atan2(x))
    }
}
