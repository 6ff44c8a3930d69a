//! Dense row-major `f64` tensors and the handful of kernels the layers need.
//!
//! Everything here is a pure function of its inputs. Layouts used throughout:
//! vectors are `[n]`, matrices `[rows, cols]`, feature maps `[H, W, C]` and
//! convolution kernels `[k, k, C_in, C_out]`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err("tensor", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equal-length rows.
    ///
    /// Panics if the rows are ragged or empty; meant for literals in tests
    /// and small hand-built fixtures.
    pub fn matrix(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty(), "matrix needs at least one row");
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|x| alpha * x)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign_scaled(&mut self, other: &Tensor, alpha: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(shape_err("transpose", format!("rank {} tensor", self.rank())));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    /// Frobenius norm of an `[H, W, C]` tensor restricted to channel `c`.
    pub fn channel_norm(&self, c: usize) -> f64 {
        let channels = *self.shape.last().unwrap_or(&1);
        self.data
            .iter()
            .skip(c)
            .step_by(channels)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

pub fn frobenius_norm(t: &Tensor) -> f64 {
    t.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_norm(v: &Tensor) -> f64 {
    frobenius_norm(v)
}

/// Linear-interpolation empirical quantile: position `q * (n - 1)` in the
/// sorted sample.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(crate::error::range_err("q", format!("{q} not in [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(shape_err(
            "matmul",
            format!("{:?} x {:?}", a.shape, b.shape),
        ));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// Matrix-vector product `W x` for `W: [m, k]`, `x: [k]`.
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || x.len() != w.shape[1] {
        return Err(shape_err(
            "matvec",
            format!("{:?} x {:?}", w.shape, x.shape),
        ));
    }
    let col = x.reshape(&[x.len(), 1])?;
    matmul(w, &col)?.reshape(&[w.shape[0]])
}

/// Output spatial extent of a convolution along one axis.
pub fn conv_output_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Geometry("stride must be positive".into()));
    }
    let padded = size + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(Error::Geometry(format!(
            "kernel {kernel} does not fit input extent {size} with padding {padding}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn check_conv(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<(usize, usize, usize, usize, usize)> {
    if input.rank() != 3 || kernel.rank() != 4 {
        return Err(shape_err(
            "conv2d",
            format!("input {:?}, kernel {:?}", input.shape, kernel.shape),
        ));
    }
    let k = kernel.shape[0];
    if kernel.shape[1] != k || kernel.shape[2] != input.shape[2] {
        return Err(shape_err(
            "conv2d",
            format!("kernel {:?} incompatible with input {:?}", kernel.shape, input.shape),
        ));
    }
    let c_out = kernel.shape[3];
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(shape_err("conv2d", format!("bias length {} != {c_out}", b.len())));
        }
    }
    Ok((input.shape[0], input.shape[1], input.shape[2], k, c_out))
}

/// 2-D cross-correlation (no kernel flip) with zero padding.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (h, w, c_in, k, c_out) = check_conv(input, kernel, Some(bias))?;
    let ho = conv_output_extent(h, k, stride, padding)?;
    let wo = conv_output_extent(w, k, stride, padding)?;
    let mut out = vec![0.0; ho * wo * c_out];
    for oi in 0..ho {
        for oj in 0..wo {
            let acc = &mut out[(oi * wo + oj) * c_out..(oi * wo + oj + 1) * c_out];
            acc.copy_from_slice(&bias.data);
            for m in 0..k {
                let ii = (oi * stride + m) as isize - padding as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for n in 0..k {
                    let jj = (oj * stride + n) as isize - padding as isize;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let pix = &input.data[(ii as usize * w + jj as usize) * c_in..][..c_in];
                    for (p, &xv) in pix.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let krow = &kernel.data[((m * k + n) * c_in + p) * c_out..][..c_out];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![ho, wo, c_out],
        data: out,
    })
}

/// Row-wise softmax of `scale * m`, stabilised by subtracting the row max.
pub fn softmax_rows(m: &Tensor, scale: f64) -> Result<Tensor> {
    if m.rank() != 2 {
        return Err(shape_err("softmax_rows", format!("rank {} tensor", m.rank())));
    }
    let cols = m.shape[1];
    let mut out = m.data.clone();
    for row in out.chunks_mut(cols) {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (scale * (*v - max)).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor {
        shape: m.shape.clone(),
        data: out,
    })
}

pub fn relu(z: &Tensor) -> Tensor {
    z.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Adds `bias` along the trailing axis.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let last = *x.shape.last().unwrap_or(&0);
    if bias.len() != last {
        return Err(shape_err(
            "add_bias",
            format!("bias length {} vs trailing extent {last}", bias.len()),
        ));
    }
    let mut out = x.clone();
    for chunk in out.data.chunks_mut(last) {
        for (o, b) in chunk.iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    Ok(out)
}

pub(crate) fn conv_input_grad(
    kernel: &Tensor,
    upstream: &Tensor,
    input_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Tensor {
    let (h, w, c_in) = (input_shape[0], input_shape[1], input_shape[2]);
    let k = kernel.shape[0];
    let c_out = kernel.shape[3];
    let (ho, wo) = (upstream.shape[0], upstream.shape[1]);
    let mut grad = vec![0.0; h * w * c_in];
    for oi in 0..ho {
        for oj in 0..wo {
            let g = &upstream.data[(oi * wo + oj) * c_out..][..c_out];
            for m in 0..k {
                let ii = (oi * stride + m) as isize - padding as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for n in 0..k {
                    let jj = (oj * stride + n) as isize - padding as isize;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let base = (ii as usize * w + jj as usize) * c_in;
                    for p in 0..c_in {
                        let krow = &kernel.data[((m * k + n) * c_in + p) * c_out..][..c_out];
                        let s: f64 = krow.iter().zip(g).map(|(a, b)| a * b).sum();
                        grad[base + p] += s;
                    }
                }
            }
        }
    }
    Tensor {
        shape: input_shape.to_vec(),
        data: grad,
    }
}

pub(crate) fn conv_kernel_grad(
    input: &Tensor,
    upstream: &Tensor,
    k: usize,
    stride: usize,
    padding: usize,
) -> Tensor {
    let (h, w, c_in) = (input.shape[0], input.shape[1], input.shape[2]);
    let c_out = upstream.shape[2];
    let (ho, wo) = (upstream.shape[0], upstream.shape[1]);
    let mut grad = vec![0.0; k * k * c_in * c_out];
    for oi in 0..ho {
        for oj in 0..wo {
            let g = &upstream.data[(oi * wo + oj) * c_out..][..c_out];
            for m in 0..k {
                let ii = (oi * stride + m) as isize - padding as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for n in 0..k {
                    let jj = (oj * stride + n) as isize - padding as isize;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let pix = &input.data[(ii as usize * w + jj as usize) * c_in..][..c_in];
                    for (p, &xv) in pix.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let krow = &mut grad[((m * k + n) * c_in + p) * c_out..][..c_out];
                        for (kg, &gv) in krow.iter_mut().zip(g) {
                            *kg += xv * gv;
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![k, k, c_in, c_out],
        data: grad,
    }
}

/// Sums a tensor over every axis but the last.
pub(crate) fn sum_leading(t: &Tensor) -> Tensor {
    let last = *t.shape.last().unwrap_or(&1);
    let mut out = vec![0.0; last];
    for chunk in t.data.chunks(last) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::vector(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frobenius_cases() {
        assert!((frobenius_norm(&Tensor::identity(2)) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius_norm(&Tensor::zeros(&[3, 4, 2])), 0.0);
        let m = Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!((frobenius_norm(&m) - 30f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn l2_cases() {
        assert_eq!(l2_norm(&Tensor::vector(vec![3.0, 4.0])), 5.0);
        assert_eq!(l2_norm(&Tensor::vector(vec![0.0; 5])), 0.0);
        assert_eq!(l2_norm(&Tensor::vector(vec![1.0; 4])), 2.0);
    }

    #[test]
    fn quantile_cases() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 4.0);
        assert_eq!(quantile(&v, 0.5).unwrap(), 2.5);
        assert!(matches!(quantile(&[], 0.5), Err(Error::EmptySample)));
        assert!(quantile(&v, 1.5).is_err());
    }

    #[test]
    fn matmul_cases() {
        let col = Tensor::matrix(&[&[5.0], &[7.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &col).unwrap(), col);
        let z = matmul(&Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]), &Tensor::zeros(&[2, 3])).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
        let out = matmul(
            &Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]),
            &Tensor::matrix(&[&[1.0], &[1.0]]),
        )
        .unwrap();
        assert_eq!(out, Tensor::matrix(&[&[3.0], &[7.0]]));
        assert!(matmul(&Tensor::identity(2), &Tensor::identity(3)).is_err());
    }

    #[test]
    fn conv_cases() {
        // 1x1 identity kernel mixing two channels
        let input = Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let mut kernel = Tensor::zeros(&[1, 1, 2, 2]);
        kernel.data_mut()[0] = 1.0;
        kernel.data_mut()[3] = 1.0;
        let out = conv2d(&input, &kernel, &Tensor::zeros(&[2]), 1, 0).unwrap();
        assert_eq!(out, input);

        let out = conv2d(&input, &Tensor::zeros(&[3, 3, 2, 1]), &Tensor::vector(vec![1.5]), 1, 1).unwrap();
        assert_eq!(out.shape(), &[2, 2, 1]);
        assert!(out.data().iter().all(|&x| x == 1.5));

        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = conv2d(&x, &Tensor::filled(&[2, 2, 1, 1], 1.0), &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[10.0]);

        assert!(matches!(
            conv2d(&x, &Tensor::filled(&[3, 3, 1, 1], 1.0), &Tensor::zeros(&[1]), 1, 0),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn conv_output_geometry() {
        assert_eq!(conv_output_extent(16, 3, 2, 1).unwrap(), 8);
        assert_eq!(conv_output_extent(5, 3, 1, 0).unwrap(), 3);
        assert_eq!(conv_output_extent(5, 3, 2, 0).unwrap(), 2);
    }

    #[test]
    fn softmax_cases() {
        let one = softmax_rows(&Tensor::matrix(&[&[42.0]]), 1.0).unwrap();
        assert_eq!(one.data(), &[1.0]);
        let eq = softmax_rows(&Tensor::filled(&[4, 4], 0.3), 1.0).unwrap();
        assert!(eq.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let s = softmax_rows(&Tensor::matrix(&[&[0.0, 3f64.ln()]]), 1.0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }
}
