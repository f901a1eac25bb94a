use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Feature-map geometry of a flattened `(channels, height, width)` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub const fn flat(len: usize) -> Self {
        Self::new(len, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    const fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Sliding-window geometry shared by convolution and its transpose. The
/// "image" side is the larger map; the "grid" side holds one position per
/// kernel placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    /// Grid size produced by sliding over `extent` pixels, if any.
    pub fn grid_extent(&self, extent: usize) -> Option<usize> {
        let padded = extent + 2 * self.padding;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Image size recovered by a transposed convolution over `grid` positions.
    pub fn image_extent(&self, grid: usize) -> Option<usize> {
        ((grid - 1) * self.stride + self.kernel).checked_sub(2 * self.padding).filter(|&e| e > 0)
    }
}

/// Unfolds `image` (batch, c*h*w) into rows `(b, gy, gx)` by columns
/// `(c, ky, kx)`.
fn im2col<T: Scalar>(image: ArrayView2<'_, T>, img: Dims, grid: (usize, usize), w: Window) -> Array2<T> {
    let (gh, gw) = grid;
    let k = w.kernel;
    let batch = image.nrows();
    let width = img.channels * k * k;
    let mut cols = Array2::<T>::zeros((batch * gh * gw, width));
    let src = image.as_standard_layout();
    let dst = cols.as_slice_mut().expect("fresh array is contiguous");
    for b in 0..batch {
        let x = src.row(b);
        let x = x.as_slice().expect("standard layout row");
        for gy in 0..gh {
            for gx in 0..gw {
                let row = &mut dst[((b * gh + gy) * gw + gx) * width..][..width];
                for c in 0..img.channels {
                    let plane = &x[c * img.plane()..][..img.plane()];
                    for ky in 0..k {
                        let iy = (gy * w.stride + ky) as isize - w.padding as isize;
                        if iy < 0 || iy >= img.height as isize {
                            continue;
                        }
                        let line = &plane[iy as usize * img.width..][..img.width];
                        let out = &mut row[(c * k + ky) * k..][..k];
                        for (kx, o) in out.iter_mut().enumerate() {
                            let ix = (gx * w.stride + kx) as isize - w.padding as isize;
                            if ix >= 0 && ix < img.width as isize {
                                *o = line[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto the image.
fn col2im<T: Scalar>(cols: ArrayView2<'_, T>, batch: usize, img: Dims, grid: (usize, usize), w: Window) -> Array2<T> {
    let (gh, gw) = grid;
    let k = w.kernel;
    let width = img.channels * k * k;
    let mut image = Array2::<T>::zeros((batch, img.len()));
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    for b in 0..batch {
        let mut xrow = image.row_mut(b);
        let x = xrow.as_slice_mut().expect("fresh array is contiguous");
        for gy in 0..gh {
            for gx in 0..gw {
                let row = &src[((b * gh + gy) * gw + gx) * width..][..width];
                for c in 0..img.channels {
                    for ky in 0..k {
                        let iy = (gy * w.stride + ky) as isize - w.padding as isize;
                        if iy < 0 || iy >= img.height as isize {
                            continue;
                        }
                        let base = c * img.plane() + iy as usize * img.width;
                        let vals = &row[(c * k + ky) * k..][..k];
                        for (kx, &v) in vals.iter().enumerate() {
                            let ix = (gx * w.stride + kx) as isize - w.padding as isize;
                            if ix >= 0 && ix < img.width as isize {
                                x[base + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    image
}

/// `(batch*hw, c)` → `(batch, c*hw)`.
fn rows_to_planar<T: Scalar>(rows: &Array2<T>, batch: usize, hw: usize) -> Array2<T> {
    let c = rows.ncols();
    let mut out = Array2::<T>::zeros((batch, c * hw));
    for b in 0..batch {
        for p in 0..hw {
            let r = rows.row(b * hw + p);
            for ch in 0..c {
                out[[b, ch * hw + p]] = r[ch];
            }
        }
    }
    out
}

/// `(batch, c*hw)` → `(batch*hw, c)`.
fn planar_to_rows<T: Scalar>(x: ArrayView2<'_, T>, c: usize, hw: usize) -> Array2<T> {
    let batch = x.nrows();
    let mut out = Array2::<T>::zeros((batch * hw, c));
    for b in 0..batch {
        let xr = x.row(b);
        for ch in 0..c {
            for p in 0..hw {
                out[[b * hw + p, ch]] = xr[ch * hw + p];
            }
        }
    }
    out
}

fn matmul<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Array2<T> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(T::one(), &a, &b, T::zero(), &mut c);
    c
}

/// `acc += a^T b`
fn add_at_b<T: Scalar>(acc: &mut Array2<T>, a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) {
    general_mat_mul(T::one(), &a.t(), &b, T::one(), acc);
}

fn uniform_init<T: Scalar, R: Rng + ?Sized>(shape: (usize, usize), fan_in: usize, rng: &mut R) -> Array2<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || T::of(rng.random_range(-bound..bound)))
}

fn uniform_bias<T: Scalar, R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Array1<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array1::from_shape_simple_fn(len, || T::of(rng.random_range(-bound..bound)))
}

/// Fully connected layer `y = x W + b`, `W: (in, out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self { weight: uniform_init((inputs, outputs), inputs, rng), bias: uniform_bias(outputs, inputs, rng) }
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut y = Array2::zeros((x.nrows(), self.weight.ncols()));
        for mut row in y.axis_iter_mut(Axis(0)) {
            row.assign(&self.bias);
        }
        general_mat_mul(T::one(), &x, &self.weight, T::one(), &mut y);
        y
    }

    fn backward(&self, x: ArrayView2<'_, T>, g: ArrayView2<'_, T>, grads: Option<&mut Self>, want_dx: bool) -> Option<Array2<T>> {
        if let Some(gr) = grads {
            add_at_b(&mut gr.weight, x, g);
            gr.bias += &g.sum_axis(Axis(0));
        }
        want_dx.then(|| matmul(g, self.weight.t()))
    }
}

/// 2-D convolution with square kernels; `W: (c_in*k*k, c_out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub window: Window,
    pub input: Dims,
    pub output: Dims,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(input: Dims, channels: usize, window: Window, rng: &mut R) -> Option<Self> {
        let output = Dims::new(channels, window.grid_extent(input.height)?, window.grid_extent(input.width)?);
        let fan_in = input.channels * window.kernel * window.kernel;
        Some(Self {
            weight: uniform_init((fan_in, channels), fan_in, rng),
            bias: uniform_bias(channels, fan_in, rng),
            window,
            input,
            output,
        })
    }

    fn grid(&self) -> (usize, usize) {
        (self.output.height, self.output.width)
    }

    /// Returns the output and the unfolded input needed by the backward pass.
    fn forward_cols(&self, x: ArrayView2<'_, T>) -> (Array2<T>, Array2<T>) {
        let cols = im2col(x, self.input, self.grid(), self.window);
        let mut rows = matmul(cols.view(), self.weight.view());
        for mut r in rows.axis_iter_mut(Axis(0)) {
            r += &self.bias;
        }
        (rows_to_planar(&rows, x.nrows(), self.output.plane()), cols)
    }

    fn backward(&self, cols: &Array2<T>, g: ArrayView2<'_, T>, grads: Option<&mut Self>, want_dx: bool) -> Option<Array2<T>> {
        let batch = g.nrows();
        let grows = planar_to_rows(g, self.output.channels, self.output.plane());
        if let Some(gr) = grads {
            add_at_b(&mut gr.weight, cols.view(), grows.view());
            gr.bias += &grows.sum_axis(Axis(0));
        }
        want_dx.then(|| {
            let dcols = matmul(grows.view(), self.weight.t());
            col2im(dcols.view(), batch, self.input, self.grid(), self.window)
        })
    }
}

/// Transposed 2-D convolution; `W: (c_in, c_out*k*k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvTranspose2d<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub window: Window,
    pub input: Dims,
    pub output: Dims,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(input: Dims, channels: usize, window: Window, rng: &mut R) -> Option<Self> {
        let output = Dims::new(channels, window.image_extent(input.height)?, window.image_extent(input.width)?);
        let fan_in = input.channels * window.kernel * window.kernel;
        Some(Self {
            weight: uniform_init((input.channels, channels * window.kernel * window.kernel), fan_in, rng),
            bias: uniform_bias(channels, fan_in, rng),
            window,
            input,
            output,
        })
    }

    fn grid(&self) -> (usize, usize) {
        (self.input.height, self.input.width)
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let rows = planar_to_rows(x, self.input.channels, self.input.plane());
        let cols = matmul(rows.view(), self.weight.view());
        let mut y = col2im(cols.view(), x.nrows(), self.output, self.grid(), self.window);
        let plane = self.output.plane();
        for mut r in y.axis_iter_mut(Axis(0)) {
            for (c, &b) in self.bias.iter().enumerate() {
                r.slice_mut(ndarray::s![c * plane..(c + 1) * plane]).mapv_inplace(|v| v + b);
            }
        }
        y
    }

    fn backward(&self, x: ArrayView2<'_, T>, g: ArrayView2<'_, T>, grads: Option<&mut Self>, want_dx: bool) -> Option<Array2<T>> {
        let gcols = im2col(g, self.output, self.grid(), self.window);
        if let Some(gr) = grads {
            let rows = planar_to_rows(x, self.input.channels, self.input.plane());
            add_at_b(&mut gr.weight, rows.view(), gcols.view());
            let plane = self.output.plane();
            let gsum = g.sum_axis(Axis(0));
            for (c, b) in gr.bias.iter_mut().enumerate() {
                *b += gsum.slice(ndarray::s![c * plane..(c + 1) * plane]).sum();
            }
        }
        want_dx.then(|| {
            let drows = matmul(gcols.view(), self.weight.t());
            rows_to_planar(&drows, x.nrows(), self.input.plane())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: ArrayView2<'_, T>) -> Array2<T> {
        match self {
            Self::Relu => x.mapv(|v| v.max(T::zero())),
            Self::LeakyRelu { slope } => {
                let s = T::of(slope);
                x.mapv(|v| if v > T::zero() { v } else { v * s })
            }
            Self::Tanh => x.mapv(T::tanh),
            Self::Sigmoid => x.mapv(|v| T::one() / (T::one() + (-v).exp())),
        }
    }

    /// Gradient given the pre-activation `x`, the activation `y`, and the
    /// upstream gradient.
    fn backward<T: Scalar>(self, x: ArrayView2<'_, T>, y: ArrayView2<'_, T>, g: ArrayView2<'_, T>) -> Array2<T> {
        let mut d = g.to_owned();
        match self {
            Self::Relu => Zip::from(&mut d).and(&x).for_each(|d, &x| {
                if x <= T::zero() {
                    *d = T::zero()
                }
            }),
            Self::LeakyRelu { slope } => {
                let s = T::of(slope);
                Zip::from(&mut d).and(&x).for_each(|d, &x| {
                    if x <= T::zero() {
                        *d *= s
                    }
                })
            }
            Self::Tanh => Zip::from(&mut d).and(&y).for_each(|d, &y| *d *= T::one() - y * y),
            Self::Sigmoid => Zip::from(&mut d).and(&y).for_each(|d, &y| *d *= y * (T::one() - y)),
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv(Conv2d<T>),
    Deconv(ConvTranspose2d<T>),
    Act(Activation),
    /// Re-interprets the flat features; no computation.
    Reshape(Dims),
}

/// What a layer must remember from its forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Saved<T> {
    Input(Array2<T>),
    Cols(Array2<T>),
    InOut(Array2<T>, Array2<T>),
    Nothing,
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        match self {
            Self::Dense(l) => l.forward(x),
            Self::Conv(l) => l.forward_cols(x).0,
            Self::Deconv(l) => l.forward(x),
            Self::Act(a) => a.apply(x),
            Self::Reshape(_) => x.to_owned(),
        }
    }

    pub(crate) fn forward_saved(&self, x: Array2<T>) -> (Array2<T>, Saved<T>) {
        match self {
            Self::Dense(l) => (l.forward(x.view()), Saved::Input(x)),
            Self::Conv(l) => {
                let (y, cols) = l.forward_cols(x.view());
                (y, Saved::Cols(cols))
            }
            Self::Deconv(l) => (l.forward(x.view()), Saved::Input(x)),
            Self::Act(a) => {
                let y = a.apply(x.view());
                (y.clone(), Saved::InOut(x, y))
            }
            Self::Reshape(_) => (x, Saved::Nothing),
        }
    }

    pub(crate) fn backward(
        &self,
        saved: &Saved<T>,
        g: Array2<T>,
        grads: Option<&mut Self>,
        want_dx: bool,
    ) -> Option<Array2<T>> {
        match (self, saved) {
            (Self::Dense(l), Saved::Input(x)) => {
                l.backward(x.view(), g.view(), grads.map(|gr| gr.as_dense_mut()), want_dx)
            }
            (Self::Conv(l), Saved::Cols(cols)) => l.backward(cols, g.view(), grads.map(|gr| gr.as_conv_mut()), want_dx),
            (Self::Deconv(l), Saved::Input(x)) => {
                l.backward(x.view(), g.view(), grads.map(|gr| gr.as_deconv_mut()), want_dx)
            }
            (Self::Act(a), Saved::InOut(x, y)) => want_dx.then(|| a.backward(x.view(), y.view(), g.view())),
            (Self::Reshape(_), Saved::Nothing) => want_dx.then_some(g),
            _ => unreachable!("forward cache does not match layer kind"),
        }
    }

    fn as_dense_mut(&mut self) -> &mut Dense<T> {
        match self {
            Self::Dense(l) => l,
            _ => unreachable!("gradient buffer layout differs from model"),
        }
    }

    fn as_conv_mut(&mut self) -> &mut Conv2d<T> {
        match self {
            Self::Conv(l) => l,
            _ => unreachable!("gradient buffer layout differs from model"),
        }
    }

    fn as_deconv_mut(&mut self) -> &mut ConvTranspose2d<T> {
        match self {
            Self::Deconv(l) => l,
            _ => unreachable!("gradient buffer layout differs from model"),
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Self::Dense(Dense { weight, bias }) => vec![slice(weight), bias.as_slice().unwrap()],
            Self::Conv(Conv2d { weight, bias, .. }) | Self::Deconv(ConvTranspose2d { weight, bias, .. }) => {
                vec![slice(weight), bias.as_slice().unwrap()]
            }
            Self::Act(_) | Self::Reshape(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Self::Dense(Dense { weight, bias }) => vec![weight.as_slice_mut().unwrap(), bias.as_slice_mut().unwrap()],
            Self::Conv(Conv2d { weight, bias, .. }) | Self::Deconv(ConvTranspose2d { weight, bias, .. }) => {
                vec![weight.as_slice_mut().unwrap(), bias.as_slice_mut().unwrap()]
            }
            Self::Act(_) | Self::Reshape(_) => Vec::new(),
        }
    }
}

fn slice<T>(a: &Array2<T>) -> &[T] {
    a.as_slice().expect("parameters are stored in standard layout")
}
