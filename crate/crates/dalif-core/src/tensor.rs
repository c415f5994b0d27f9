//! Minimal dense tensor arithmetic: row-major `f64` arrays, direct-loop
//! convolution, and a deterministic seeded random stream. No broadcasting,
//! no autodiff; the backward pass is hand-written in [`crate::stbp`].

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense N-dimensional array of `f64`, flat row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Tensor of the given shape with every element equal to `value`.
    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} needs {} elements, got {}", shape, len, data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Same storage under a new shape; element count must match.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise combination of two equally-shaped tensors.
    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Standard cross-correlation with zero padding.
///
/// `input` is `[C_in, H, W]` or batched `[B, C_in, H, W]`; `weight` is
/// `[C_out, C_in, k, k]`. Output spatial extent is
/// `floor((H + 2*padding - k) / stride) + 1`.
pub fn conv2d(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    if weight.shape().len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("weight must be rank 4, got {:?}", weight.shape()),
        ));
    }
    match input.shape().len() {
        3 => conv2d_single(input, weight, stride, padding),
        4 => {
            let batch = input.shape()[0];
            let per = input.len() / batch.max(1);
            let sample_shape = input.shape()[1..].to_vec();
            let mut out_data = Vec::new();
            let mut out_shape = Vec::new();
            for b in 0..batch {
                let sample = Tensor::from_vec(
                    &sample_shape,
                    input.data()[b * per..(b + 1) * per].to_vec(),
                )?;
                let o = conv2d_single(&sample, weight, stride, padding)?;
                if b == 0 {
                    out_shape = o.shape().to_vec();
                }
                out_data.extend_from_slice(o.data());
            }
            let mut shape = vec![batch];
            shape.extend_from_slice(&out_shape);
            Tensor::from_vec(&shape, out_data)
        }
        r => Err(Error::shape(
            "conv2d",
            format!("input must be rank 3 or 4, got rank {r}"),
        )),
    }
}

fn conv2d_single(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, wc_in, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    if wc_in != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("input channels {c_in} vs weight channels {wc_in}"),
        ));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be >= 1".to_string()));
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} exceeds padded input {}x{}", h + 2 * padding, w + 2 * padding),
        ));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;

    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += x[(ci * h + iy as usize) * w + ix as usize]
                                * wt[((co * c_in + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    let t = Tensor::from_vec(&[c_out, oh, ow], out)?;
    if !t.all_finite() {
        return Err(Error::NonFinite {
            context: "conv2d output".to_string(),
        });
    }
    Ok(t)
}

/// Matrix-vector product: `weight` is `[N_out, N_in]`, `input` is `[N_in]`
/// or batched `[B, N_in]`.
pub fn fully_connected(input: &Tensor, weight: &Tensor) -> Result<Tensor> {
    if weight.shape().len() != 2 {
        return Err(Error::shape(
            "fully_connected",
            format!("weight must be rank 2, got {:?}", weight.shape()),
        ));
    }
    let (n_out, n_in) = (weight.shape()[0], weight.shape()[1]);
    let matvec = |x: &[f64], out: &mut Vec<f64>| {
        for o in 0..n_out {
            let row = &weight.data()[o * n_in..(o + 1) * n_in];
            let mut acc = 0.0;
            for i in 0..n_in {
                acc += row[i] * x[i];
            }
            out.push(acc);
        }
    };
    let result = match input.shape().len() {
        1 => {
            if input.shape()[0] != n_in {
                return Err(Error::shape(
                    "fully_connected",
                    format!("input {} vs weight inner {}", input.shape()[0], n_in),
                ));
            }
            let mut out = Vec::with_capacity(n_out);
            matvec(input.data(), &mut out);
            Tensor::from_vec(&[n_out], out)?
        }
        2 => {
            let batch = input.shape()[0];
            if input.shape()[1] != n_in {
                return Err(Error::shape(
                    "fully_connected",
                    format!("input {} vs weight inner {}", input.shape()[1], n_in),
                ));
            }
            let mut out = Vec::with_capacity(batch * n_out);
            for b in 0..batch {
                matvec(&input.data()[b * n_in..(b + 1) * n_in], &mut out);
            }
            Tensor::from_vec(&[batch, n_out], out)?
        }
        r => {
            return Err(Error::shape(
                "fully_connected",
                format!("input must be rank 1 or 2, got rank {r}"),
            ))
        }
    };
    if !result.all_finite() {
        return Err(Error::NonFinite {
            context: "fully_connected output".to_string(),
        });
    }
    Ok(result)
}

/// Deterministic seeded random stream (SplitMix64). Identical seeds give
/// identical sequences on every platform; state is just a 64-bit counter.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> RngStream {
        RngStream { seed, state: seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from a seed and a purpose label, so the
    /// init stream, the per-epoch shuffles, and the data generator never
    /// collide. FNV-1a folds the label into the seed.
    pub fn derive(seed: u64, label: &str) -> RngStream {
        let mut hash = 0xcbf29ce484222325u64;
        for byte in label.bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        let mut mixer = RngStream::new(seed ^ hash);
        let derived = mixer.next_u64();
        RngStream::new(derived)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Uniform Kaiming-style initialization: values in
/// `[-sqrt(6/fan_in), +sqrt(6/fan_in))`.
pub fn kaiming_init(rng: &mut RngStream, shape: &[usize], fan_in: usize) -> Tensor {
    assert!(fan_in > 0, "fan_in must be positive");
    let bound = (6.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}
