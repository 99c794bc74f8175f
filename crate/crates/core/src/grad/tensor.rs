use rand::Rng;

use crate::error::{Error, Result};

/// A dense `[channels, length]` array of `f64`, stored channel-major.
///
/// Matrices (linear-layer weights, conv kernels) reuse the same layout:
/// a `[rows, cols]` matrix is a tensor with `rows` channels of length
/// `cols`, and a conv kernel `[c_out, c_in, k]` has `c_out` channels of
/// length `c_in * k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    length: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(channels: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("tensor needs at least one channel".into()));
        }
        if data.len() != channels * length {
            return Err(Error::Shape(format!(
                "{} values do not fill a [{channels}, {length}] tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            length,
            data,
        })
    }

    pub fn zeros(channels: usize, length: usize) -> Self {
        Self::full(channels, length, 0.0)
    }

    pub fn full(channels: usize, length: usize, value: f64) -> Self {
        assert!(channels > 0, "tensor needs at least one channel");
        Self {
            channels,
            length,
            data: vec![value; channels * length],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(1, 1, value)
    }

    /// Single-channel tensor holding `values`.
    pub fn row(values: Vec<f64>) -> Self {
        let length = values.len();
        Self {
            channels: 1,
            length,
            data: values,
        }
    }

    /// Column vector `[n, 1]`.
    pub fn column(values: Vec<f64>) -> Self {
        let channels = values.len();
        assert!(channels > 0, "column vector needs at least one entry");
        Self {
            channels,
            length: 1,
            data: values,
        }
    }

    /// Uniform in `±bound`, drawn in storage order.
    pub fn uniform<R: Rng>(channels: usize, length: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..channels * length)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            channels,
            length,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.length)
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.length..(c + 1) * self.length]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let l = self.length;
        &mut self.data[c * l..(c + 1) * l]
    }

    pub fn get(&self, c: usize, i: usize) -> f64 {
        self.data[c * self.length + i]
    }

    /// Value of a `[1, 1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshaped(mut self, channels: usize, length: usize) -> Result<Self> {
        if channels * length != self.data.len() || channels == 0 {
            return Err(Error::Shape(format!(
                "cannot reshape [{}, {}] into [{channels}, {length}]",
                self.channels, self.length
            )));
        }
        self.channels = channels;
        self.length = length;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            channels: self.channels,
            length: self.length,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// NaN/Inf check used by the trainer between steps.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{what}[{}, {}] = {}",
                i / self.length.max(1),
                i % self.length.max(1),
                self.data[i]
            ))),
        }
    }
}
