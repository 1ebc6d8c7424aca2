use crate::error::{Error, Result};

/// Dense 4-D tensor in NCHW order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            shape: [n, c, h, w],
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Stack equally sized planar images into a batch.
    pub fn stack<'a>(samples: impl IntoIterator<Item = &'a [f32]>, c: usize, h: usize, w: usize) -> Result<Self> {
        let mut data = Vec::new();
        let mut n = 0;
        for s in samples {
            if s.len() != c * h * w {
                return Err(Error::Shape(format!(
                    "sample of {} values, expected {c}x{h}x{w}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
            n += 1;
        }
        Ok(Self {
            shape: [n, c, h, w],
            data,
        })
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

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    /// Concatenate along channels: `[a, b]`.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let [n, ca, h, w] = a.shape;
        let [nb, cb, hb, wb] = b.shape;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                a.shape, b.shape
            )));
        }
        let mut out = Tensor::zeros(n, ca + cb, h, w);
        for i in 0..n {
            let dst = out.sample_mut(i);
            dst[..ca * h * w].copy_from_slice(a.sample(i));
            dst[ca * h * w..].copy_from_slice(b.sample(i));
        }
        Ok(out)
    }

    /// Inverse of [`Tensor::concat_channels`]: split after `first` channels.
    pub fn split_channels(&self, first: usize) -> (Tensor, Tensor) {
        let [n, c, h, w] = self.shape;
        assert!(first <= c);
        let mut a = Tensor::zeros(n, first, h, w);
        let mut b = Tensor::zeros(n, c - first, h, w);
        for i in 0..n {
            let s = self.sample(i);
            a.sample_mut(i).copy_from_slice(&s[..first * h * w]);
            b.sample_mut(i).copy_from_slice(&s[first * h * w..]);
        }
        (a, b)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Trainable parameter with a lazily allocated gradient buffer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        Self {
            value,
            grad: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn grad_mut(&mut self) -> &mut [f32] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}
