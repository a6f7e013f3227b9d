//! Dense tensors, binary masks and the shared low-level kernels.
//!
//! Layout is row-major everywhere. Feature maps are `(channels, height, width)`,
//! single-channel maps are `(height, width)` and correlation tensors are rank 4.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Highest rank a [`Tensor`] may have.
pub const MAX_RANK: usize = 4;

/// Dense, contiguous, row-major array of up to four dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("rank must be between 1 and {MAX_RANK}"),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "all extents must be at least 1".into(),
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "element count overflows".into(),
        })
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("shape holds {n} elements but data has {}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// Builds a tensor by evaluating `f` at every linear index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Element at a multi-dimensional index. Panics when out of bounds.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.rank(), "index rank");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * d + i;
        }
        self.data[off]
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "expected rank 3 (channels, height, width)".into(),
            }),
        }
    }

    /// `(height, width)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [h, w] => Ok((h, w)),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "expected rank 2 (height, width)".into(),
            }),
        }
    }

    /// Contiguous plane `i` of a rank-3 tensor.
    pub fn channel(&self, i: usize) -> &[T] {
        let plane = self.shape[1..].iter().product::<usize>();
        &self.data[i * plane..(i + 1) * plane]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }
}

/// Two-dimensional `{0,1}` grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape {
                shape: vec![height, width],
                reason: "mask extents must be at least 1".into(),
            });
        }
        if height * width != data.len() {
            return Err(Error::InvalidShape {
                shape: vec![height, width],
                reason: format!("mask holds {} pixels but data has {}", height * width, data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "mask values must be 0 or 1, found {bad}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Result<Self> {
        Self::new(height, width, vec![value as u8; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Rank-2 float view of the mask.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: vec![self.height, self.width],
            data: self
                .data
                .iter()
                .map(|&v| if v == 1 { T::one() } else { T::zero() })
                .collect(),
        }
    }

    /// Pixels where `value >= threshold` become 1.
    pub fn threshold<T: Scalar>(map: &Tensor<T>, threshold: T) -> Result<Self> {
        let (h, w) = map.dims2()?;
        Self::new(
            h,
            w,
            map.data().iter().map(|&v| (v >= threshold) as u8).collect(),
        )
    }
}

/// Elementwise product of two equally shaped tensors.
pub fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape != b.shape {
        return Err(Error::shape("hadamard", &a.shape, &b.shape));
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect(),
    })
}

/// Source sample positions for one output axis: `(lo, hi, weight_of_hi)`.
///
/// Half-pixel centers, `src = (i + 0.5) * in / out - 0.5`, clamped to the
/// valid range; corners are not aligned.
fn axis_taps<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, T::of(src - lo as f64))
        })
        .collect()
}

#[inline]
fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    a + t * (b - a)
}

/// Bilinear resize of a rank-2 float map.
///
/// Each output value is a convex combination of at most four inputs, so the
/// result stays within `[min(input), max(input)]`.
pub fn resize_map<T: Scalar>(map: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w) = map.dims2()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be non-empty, got {out_h}x{out_w}"
        )));
    }
    let rows = axis_taps::<T>(h, out_h);
    let cols = axis_taps::<T>(w, out_w);
    let src = map.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, wy) in &rows {
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        for &(x0, x1, wx) in &cols {
            let top = lerp(r0[x0], r0[x1], wx);
            let bottom = lerp(r1[x0], r1[x1], wx);
            out.push(lerp(top, bottom, wy));
        }
    }
    Tensor::new(&[out_h, out_w], out)
}

/// Resizes a binary mask to `(out_h, out_w)` with bilinear interpolation.
///
/// The result is not re-binarized: boundary pixels keep fractional values.
pub fn resize_bilinear<T: Scalar>(mask: &BinaryMask, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    resize_map(&mask.to_tensor::<T>(), out_h, out_w)
}

/// Replicates a `(h, w)` map into `channels` identical planes.
pub fn broadcast_mask<T: Scalar>(maskf: &Tensor<T>, channels: usize) -> Result<Tensor<T>> {
    let (h, w) = maskf.dims2()?;
    if channels == 0 {
        return Err(Error::InvalidArgument("channel count must be at least 1".into()));
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for _ in 0..channels {
        data.extend_from_slice(maskf.data());
    }
    Tensor::new(&[channels, h, w], data)
}

/// Multiplies every channel plane of `features` by the `(h, w)` map `weights`.
///
/// Equivalent to `hadamard(features, broadcast_mask(weights, c))` without
/// materializing the broadcast.
pub fn scale_planes<T: Scalar>(features: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = features.dims3()?;
    if weights.shape() != [h, w] {
        return Err(Error::shape("scale_planes", features.shape(), weights.shape()));
    }
    let plane = weights.data();
    let mut data = Vec::with_capacity(features.len());
    for ch in features.data().chunks_exact(h * w) {
        data.extend(ch.iter().zip(plane).map(|(&f, &m)| f * m));
    }
    Tensor::new(features.shape(), data)
}

/// Overlap weights of an area (box) resize along one axis: for each output
/// index, `(input index, weight)` pairs summing to 1.
fn area_taps(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(input);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resize of every plane of a `(c, h, w)` array stored as f64.
pub(crate) fn area_resize(planes: &[f64], c: usize, (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let rows = area_taps(h, oh);
    let cols = area_taps(w, ow);
    let mut out = vec![0.0; c * oh * ow];
    let mut tmp = vec![0.0; oh * w];
    for ch in 0..c {
        let src = &planes[ch * h * w..(ch + 1) * h * w];
        tmp.iter_mut().for_each(|v| *v = 0.0);
        for (oy, taps) in rows.iter().enumerate() {
            for &(y, wt) in taps {
                for x in 0..w {
                    tmp[oy * w + x] += wt * src[y * w + x];
                }
            }
        }
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for (ox, taps) in cols.iter().enumerate() {
                dst[oy * ow + ox] = taps.iter().map(|&(x, wt)| wt * tmp[oy * w + x]).sum();
            }
        }
    }
    out
}

/// Fraction of each `(h, w)` cell covered by foreground pixels.
pub fn mask_coverage<T: Scalar>(mask: &BinaryMask, h: usize, w: usize) -> Result<Tensor<T>> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("coverage size must be non-empty, got {h}x{w}")));
    }
    let src: Vec<f64> = mask.data().iter().map(|&v| v as f64).collect();
    let cov = area_resize(&src, 1, mask.dims(), (h, w));
    Tensor::new(&[h, w], cov.into_iter().map(T::of).collect())
}
