use crate::error::{dim_err, Error, Result};
use crate::volume::{Volume, ZDisplacementMap};

/// Dense `batch x channels x fast x slow` tensor, row-major.
///
/// The two spatial axes are the fast scanning axis (`W`) and the B-scan axis (`N`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return dim_err(format!("tensor dims must be >= 1, got {shape:?}"));
        }
        if data.len() != shape.iter().product::<usize>() {
            return dim_err(format!("{} values for tensor {shape:?}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    /// Skips the finiteness scan; for kernels whose output is finite by construction.
    pub(crate) fn from_raw(shape: [usize; 4], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// Spatial size `fast * slow`.
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, a: usize, s: usize) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + a) * self.shape[3] + s
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, a: usize, s: usize) -> f64 {
        self.data[self.index(b, c, a, s)]
    }

    /// One batch item, `channels * plane` values.
    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.shape[1] * self.plane();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn dot(&self, other: &Tensor4) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Stacks equally shaped single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor4]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Dimension("empty batch".into()))?;
        let [_, c, a, s] = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * a * s);
        for t in items {
            if t.shape != [1, c, a, s] {
                return dim_err(format!("cannot stack {:?} onto {:?}", t.shape, first.shape));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape: [items.len(), c, a, s], data })
    }

    /// Splits along the batch axis.
    pub fn unstack(&self) -> Vec<Tensor4> {
        let [b, c, a, s] = self.shape;
        (0..b).map(|i| Self { shape: [1, c, a, s], data: self.item(i).to_vec() }).collect()
    }

    /// `[1, H, W, N]`: depth becomes channels.
    pub fn from_volume(v: &Volume) -> Self {
        let (h, w, n) = v.dims();
        let mut data = vec![0.0; h * w * n];
        for y in 0..n {
            for x in 0..w {
                for (z, &val) in v.ascan(x, y).iter().enumerate() {
                    data[(z * w + x) * n + y] = val as f64;
                }
            }
        }
        Self { shape: [1, h, w, n], data }
    }

    /// `[1, C, W, N]` from `C` maps laid out `y * W + x`.
    pub fn from_maps(maps: &[&[f64]], width: usize, slices: usize) -> Result<Self> {
        let mut data = vec![0.0; maps.len() * width * slices];
        for (c, m) in maps.iter().enumerate() {
            if m.len() != width * slices {
                return dim_err("map size does not match the tensor plane");
            }
            for y in 0..slices {
                for x in 0..width {
                    data[(c * width + x) * slices + y] = m[y * width + x];
                }
            }
        }
        Self::new([1, maps.len(), width, slices], data)
    }

    /// Channel `c` of item `b` as a `y * W + x` map.
    pub fn to_map(&self, b: usize, c: usize) -> Vec<f64> {
        let [_, _, w, n] = self.shape;
        let mut out = vec![0.0; w * n];
        for x in 0..w {
            for y in 0..n {
                out[y * w + x] = self.get(b, c, x, y);
            }
        }
        out
    }

    pub fn to_z_map(&self, b: usize) -> Result<ZDisplacementMap> {
        ZDisplacementMap::new(self.shape[2], self.shape[3], self.to_map(b, 0))
    }
}
