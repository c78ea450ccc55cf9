//! Dense row-major 2-D storage at feature-map resolution.

use alloc::vec;
use alloc::vec::Vec;

/// A `width × height` grid addressed by `(x, y)` = (column, row).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    /// Wrap an existing row-major buffer. Returns `None` on a length mismatch.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Grid { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[self.index(x, y)]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        let i = self.index(x, y);
        &mut self.data[i]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Iterate `((x, y), &value)` in row-major order.
    pub fn iter_cells(&self) -> impl Iterator<Item = ((usize, usize), &T)> {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, v)| ((i % w, i / w), v))
    }
}

/// Grid of `m`-dimensional vectors stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f64>,
}

impl VectorGrid {
    pub fn zeros(width: usize, height: usize, dim: usize) -> Self {
        VectorGrid {
            width,
            height,
            dim,
            data: vec![0.0; width * height * dim],
        }
    }

    pub fn from_vec(width: usize, height: usize, dim: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == width * height * dim).then_some(VectorGrid {
            width,
            height,
            dim,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn set(&mut self, x: usize, y: usize, v: &[f64]) {
        assert_eq!(v.len(), self.dim);
        let start = (y * self.width + x) * self.dim;
        self.data[start..start + self.dim].copy_from_slice(v);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}
