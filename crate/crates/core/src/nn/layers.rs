use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, Real};

/// Spatial bookkeeping shared by convolution and transposed convolution.
///
/// For `Conv2d` the "image" side is the layer input and the "grid" side is
/// the output; for `ConvTranspose2d` the roles are swapped. In both cases
/// `grid = (image + 2·padding − kernel) / stride + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub image_channels: usize,
    pub grid_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub image_h: usize,
    pub image_w: usize,
}

impl ConvGeometry {
    pub fn grid_h(&self) -> usize {
        (self.image_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn grid_w(&self) -> usize {
        (self.image_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn image_len(&self) -> usize {
        self.image_channels * self.image_h * self.image_w
    }

    fn grid_len(&self) -> usize {
        self.grid_channels * self.grid_h() * self.grid_w()
    }

    fn patch_len(&self) -> usize {
        self.image_channels * self.kernel * self.kernel
    }

    /// Unfolds an image into a `patch_len × grid_hw` column matrix.
    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let (gh, gw) = (self.grid_h(), self.grid_w());
        let k = self.kernel;
        let mut row = 0;
        for c in 0..self.image_channels {
            let plane = &image[c * self.image_h * self.image_w..(c + 1) * self.image_h * self.image_w];
            for ki in 0..k {
                for kj in 0..k {
                    let dst = &mut cols[row * gh * gw..(row + 1) * gh * gw];
                    for oy in 0..gh {
                        let y = (oy * self.stride + ki) as isize - self.padding as isize;
                        let line = &mut dst[oy * gw..(oy + 1) * gw];
                        if y < 0 || y >= self.image_h as isize {
                            line.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[y as usize * self.image_w..(y as usize + 1) * self.image_w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let x = (ox * self.stride + kj) as isize - self.padding as isize;
                            *v = if x < 0 || x >= self.image_w as isize {
                                T::zero()
                            } else {
                                src[x as usize]
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Folds a column matrix back onto an image, accumulating overlaps.
    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let (gh, gw) = (self.grid_h(), self.grid_w());
        let k = self.kernel;
        let mut row = 0;
        for c in 0..self.image_channels {
            let plane = &mut image[c * self.image_h * self.image_w..(c + 1) * self.image_h * self.image_w];
            for ki in 0..k {
                for kj in 0..k {
                    let src = &cols[row * gh * gw..(row + 1) * gh * gw];
                    for oy in 0..gh {
                        let y = (oy * self.stride + ki) as isize - self.padding as isize;
                        if y < 0 || y >= self.image_h as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.image_w..(y as usize + 1) * self.image_w];
                        for ox in 0..gw {
                            let x = (ox * self.stride + kj) as isize - self.padding as isize;
                            if x >= 0 && x < self.image_w as isize {
                                dst[x as usize] = dst[x as usize] + src[oy * gw + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// One stage of a feed-forward network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// Weight `outputs × inputs`, bias `outputs`.
    Linear {
        inputs: usize,
        outputs: usize,
    },
    /// Weight `out_ch × in_ch × k × k`, bias `out_ch`.
    Conv2d(ConvGeometry),
    /// Weight `in_ch × out_ch × k × k`, bias `out_ch`. Upsamples the grid
    /// side of the geometry back to its image side.
    ConvTranspose2d(ConvGeometry),
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Sigmoid,
}

impl Layer {
    fn dims(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Linear { inputs, outputs } => Some((*inputs, *outputs)),
            Layer::Conv2d(g) => Some((g.image_len(), g.grid_len())),
            Layer::ConvTranspose2d(g) => Some((g.grid_len(), g.image_len())),
            _ => None,
        }
    }

    fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            Layer::Linear { inputs, outputs } => {
                vec![("weight", vec![*outputs, *inputs]), ("bias", vec![*outputs])]
            }
            Layer::Conv2d(g) => vec![
                ("weight", vec![g.grid_channels, g.image_channels, g.kernel, g.kernel]),
                ("bias", vec![g.grid_channels]),
            ],
            Layer::ConvTranspose2d(g) => vec![
                ("weight", vec![g.grid_channels, g.image_channels, g.kernel, g.kernel]),
                ("bias", vec![g.image_channels]),
            ],
            _ => vec![],
        }
    }

    fn fan_in(&self) -> usize {
        match self {
            Layer::Linear { inputs, .. } => *inputs,
            Layer::Conv2d(g) => g.patch_len(),
            Layer::ConvTranspose2d(g) => g.grid_channels * g.kernel * g.kernel,
            _ => 1,
        }
    }
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

/// Layer activations recorded by a forward pass, input first.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub activations: Vec<Matrix<T>>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.activations.last().expect("trace holds the input at least")
    }
}

/// Sequential stack of layers and their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer>,
    pub params: Vec<Param<T>>,
    first_param: Vec<Option<usize>>,
    input_dim: usize,
    output_dim: usize,
}

impl<T: Real> Network<T> {
    /// Builds the network with fan-in scaled uniform weights and zero biases.
    pub fn new<R: Rng>(name: &str, layers: Vec<Layer>, rng: &mut R) -> Self {
        let mut net = Self::zeroed(name, layers);
        for (layer, first) in net.layers.iter().zip(&net.first_param) {
            if let Some(i) = *first {
                let bound = 1.0 / (layer.fan_in() as f64).sqrt();
                for w in &mut net.params[i].data {
                    *w = T::lit(rng.gen_range(-bound..bound));
                }
            }
        }
        net
    }

    /// Same architecture with every parameter zero.
    pub fn zeroed(name: &str, layers: Vec<Layer>) -> Self {
        let mut params = Vec::new();
        let mut first_param = Vec::new();
        let mut width: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            if let Some((inp, out)) = layer.dims() {
                if let Some(w) = width {
                    assert_eq!(w, inp, "layer {i} of `{name}` expects {inp} inputs, previous emits {w}");
                }
                width = Some(out);
                first_param.push(Some(params.len()));
                for (suffix, dims) in layer.param_shapes() {
                    let len = dims.iter().product();
                    params.push(Param {
                        name: format!("{name}.{i}.{suffix}"),
                        dims,
                        data: vec![T::zero(); len],
                    });
                }
            } else {
                first_param.push(None);
            }
        }
        let input_dim = layers
            .iter()
            .find_map(Layer::dims)
            .map(|d| d.0)
            .expect("network needs a parametric layer");
        Network {
            layers,
            params,
            first_param,
            input_dim,
            output_dim: width.unwrap(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        assert_eq!(x.cols(), self.input_dim, "network input width");
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            cur = self.layer_forward(i, &cur);
        }
        cur
    }

    pub fn forward_trace(&self, x: &Matrix<T>) -> Trace<T> {
        assert_eq!(x.cols(), self.input_dim, "network input width");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for i in 0..self.layers.len() {
            let next = self.layer_forward(i, activations.last().unwrap());
            activations.push(next);
        }
        Trace { activations }
    }

    /// Backpropagates `grad_out` (gradient of a scalar with respect to the
    /// network output). Returns parameter gradients in `params` order and,
    /// when requested, the gradient with respect to the network input.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_out: Matrix<T>,
        want_input_grad: bool,
    ) -> (Vec<Vec<T>>, Option<Matrix<T>>) {
        let mut grads: Vec<Vec<T>> = self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        let mut g = grad_out;
        for i in (0..self.layers.len()).rev() {
            let need = i > 0 || want_input_grad;
            match self.layer_backward(i, &trace.activations[i], &trace.activations[i + 1], g, &mut grads, need) {
                Some(next) => g = next,
                None => return (grads, None),
            }
        }
        (grads, Some(g))
    }

    fn layer_forward(&self, i: usize, x: &Matrix<T>) -> Matrix<T> {
        let b = x.rows();
        match &self.layers[i] {
            Layer::Linear { inputs, outputs } => {
                let p = self.first_param[i].unwrap();
                let (w, bias) = (&self.params[p].data, &self.params[p + 1].data);
                let mut y = Matrix::zeros(b, *outputs);
                for r in 0..b {
                    y.row_mut(r).copy_from_slice(bias);
                }
                let inp = *inputs as isize;
                let out = *outputs as isize;
                T::gemm(
                    b,
                    *inputs,
                    *outputs,
                    T::one(),
                    x.data(),
                    inp,
                    1,
                    w,
                    1,
                    inp,
                    T::one(),
                    y.data_mut(),
                    out,
                    1,
                );
                y
            }
            Layer::Conv2d(g) => {
                let p = self.first_param[i].unwrap();
                let (w, bias) = (&self.params[p].data, &self.params[p + 1].data);
                let hw = g.grid_h() * g.grid_w();
                let mut cols = vec![T::zero(); g.patch_len() * hw];
                let mut y = Matrix::zeros(b, g.grid_len());
                for r in 0..b {
                    g.im2col(x.row(r), &mut cols);
                    let out = y.row_mut(r);
                    for (c, chunk) in out.chunks_mut(hw).enumerate() {
                        chunk.iter_mut().for_each(|v| *v = bias[c]);
                    }
                    let pl = g.patch_len() as isize;
                    T::gemm(
                        g.grid_channels,
                        g.patch_len(),
                        hw,
                        T::one(),
                        w,
                        pl,
                        1,
                        &cols,
                        hw as isize,
                        1,
                        T::one(),
                        out,
                        hw as isize,
                        1,
                    );
                }
                y
            }
            Layer::ConvTranspose2d(g) => {
                let p = self.first_param[i].unwrap();
                let (w, bias) = (&self.params[p].data, &self.params[p + 1].data);
                let hw = g.grid_h() * g.grid_w();
                let pl = g.patch_len();
                let mut cols = vec![T::zero(); pl * hw];
                let mut y = Matrix::zeros(b, g.image_len());
                let plane = g.image_h * g.image_w;
                for r in 0..b {
                    // cols = Wᵀ · x, W is grid_channels × patch_len.
                    T::gemm(
                        pl,
                        g.grid_channels,
                        hw,
                        T::one(),
                        w,
                        1,
                        pl as isize,
                        x.row(r),
                        hw as isize,
                        1,
                        T::zero(),
                        &mut cols,
                        hw as isize,
                        1,
                    );
                    let out = y.row_mut(r);
                    g.col2im(&cols, out);
                    for (c, chunk) in out.chunks_mut(plane).enumerate() {
                        chunk.iter_mut().for_each(|v| *v = *v + bias[c]);
                    }
                }
                y
            }
            Layer::LeakyRelu { slope } => {
                let s = T::lit(*slope);
                x.map(|v| if v > T::zero() { v } else { s * v })
            }
            Layer::Tanh => x.map(|v| v.tanh()),
            Layer::Sigmoid => x.map(sigmoid),
        }
    }

    fn layer_backward(
        &self,
        i: usize,
        x: &Matrix<T>,
        y: &Matrix<T>,
        mut gy: Matrix<T>,
        grads: &mut [Vec<T>],
        need_input_grad: bool,
    ) -> Option<Matrix<T>> {
        let b = x.rows();
        match &self.layers[i] {
            Layer::Linear { inputs, outputs } => {
                let p = self.first_param[i].unwrap();
                let (inp, out) = (*inputs as isize, *outputs as isize);
                // dW (out × in) = gyᵀ · x
                T::gemm(
                    *outputs,
                    b,
                    *inputs,
                    T::one(),
                    gy.data(),
                    1,
                    out,
                    x.data(),
                    inp,
                    1,
                    T::one(),
                    &mut grads[p],
                    inp,
                    1,
                );
                let db = &mut grads[p + 1];
                for r in gy.iter_rows() {
                    for (d, &v) in db.iter_mut().zip(r) {
                        *d = *d + v;
                    }
                }
                if !need_input_grad {
                    return None;
                }
                let w = &self.params[p].data;
                let mut gx = Matrix::zeros(b, *inputs);
                T::gemm(
                    b,
                    *outputs,
                    *inputs,
                    T::one(),
                    gy.data(),
                    out,
                    1,
                    w,
                    inp,
                    1,
                    T::zero(),
                    gx.data_mut(),
                    inp,
                    1,
                );
                Some(gx)
            }
            Layer::Conv2d(g) => {
                let p = self.first_param[i].unwrap();
                let hw = g.grid_h() * g.grid_w();
                let pl = g.patch_len();
                let mut cols = vec![T::zero(); pl * hw];
                let mut gcols = vec![T::zero(); pl * hw];
                let mut gx = need_input_grad.then(|| Matrix::zeros(b, g.image_len()));
                let (gw_slice, rest) = grads[p..].split_at_mut(1);
                let (gw, gb) = (&mut gw_slice[0], &mut rest[0]);
                let w = &self.params[p].data;
                for r in 0..b {
                    let gyr = gy.row(r);
                    for (c, chunk) in gyr.chunks(hw).enumerate() {
                        gb[c] = gb[c] + chunk.iter().copied().sum();
                    }
                    g.im2col(x.row(r), &mut cols);
                    // dW (oc × pl) += gy_r (oc × hw) · colsᵀ (hw × pl)
                    T::gemm(
                        g.grid_channels,
                        hw,
                        pl,
                        T::one(),
                        gyr,
                        hw as isize,
                        1,
                        &cols,
                        1,
                        hw as isize,
                        T::one(),
                        gw,
                        pl as isize,
                        1,
                    );
                    if let Some(gx) = gx.as_mut() {
                        // dcols (pl × hw) = Wᵀ · gy_r
                        T::gemm(
                            pl,
                            g.grid_channels,
                            hw,
                            T::one(),
                            w,
                            1,
                            pl as isize,
                            gyr,
                            hw as isize,
                            1,
                            T::zero(),
                            &mut gcols,
                            hw as isize,
                            1,
                        );
                        g.col2im(&gcols, gx.row_mut(r));
                    }
                }
                gx
            }
            Layer::ConvTranspose2d(g) => {
                let p = self.first_param[i].unwrap();
                let hw = g.grid_h() * g.grid_w();
                let pl = g.patch_len();
                let plane = g.image_h * g.image_w;
                let mut cols = vec![T::zero(); pl * hw];
                let mut gx = need_input_grad.then(|| Matrix::zeros(b, g.grid_len()));
                let (gw_slice, rest) = grads[p..].split_at_mut(1);
                let (gw, gb) = (&mut gw_slice[0], &mut rest[0]);
                let w = &self.params[p].data;
                for r in 0..b {
                    let gyr = gy.row(r);
                    for (c, chunk) in gyr.chunks(plane).enumerate() {
                        gb[c] = gb[c] + chunk.iter().copied().sum();
                    }
                    g.im2col(gyr, &mut cols);
                    // dW (ic × pl) += x_r (ic × hw) · colsᵀ
                    T::gemm(
                        g.grid_channels,
                        hw,
                        pl,
                        T::one(),
                        x.row(r),
                        hw as isize,
                        1,
                        &cols,
                        1,
                        hw as isize,
                        T::one(),
                        gw,
                        pl as isize,
                        1,
                    );
                    if let Some(gx) = gx.as_mut() {
                        // dx (ic × hw) = W (ic × pl) · cols
                        T::gemm(
                            g.grid_channels,
                            pl,
                            hw,
                            T::one(),
                            w,
                            pl as isize,
                            1,
                            &cols,
                            hw as isize,
                            1,
                            T::zero(),
                            gx.row_mut(r),
                            hw as isize,
                            1,
                        );
                    }
                }
                gx
            }
            Layer::LeakyRelu { slope } => {
                let s = T::lit(*slope);
                for (gv, &xv) in gy.data_mut().iter_mut().zip(x.data()) {
                    if xv <= T::zero() {
                        *gv = *gv * s;
                    }
                }
                Some(gy)
            }
            Layer::Tanh => {
                for (gv, &yv) in gy.data_mut().iter_mut().zip(y.data()) {
                    *gv = *gv * (T::one() - yv * yv);
                }
                Some(gy)
            }
            Layer::Sigmoid => {
                for (gv, &yv) in gy.data_mut().iter_mut().zip(y.data()) {
                    *gv = *gv * yv * (T::one() - yv);
                }
                Some(gy)
            }
        }
    }

    /// Copy with every parameter converted to another scalar type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    data: p.data.iter().map(|v| U::lit(v.to_f64().unwrap())).collect(),
                })
                .collect(),
            first_param: self.first_param.clone(),
            input_dim: self.input_dim,
            output_dim: self.output_dim,
        }
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geometry(ic: usize, oc: usize, h: usize) -> ConvGeometry {
        ConvGeometry {
            image_channels: ic,
            grid_channels: oc,
            kernel: 4,
            stride: 2,
            padding: 1,
            image_h: h,
            image_w: h,
        }
    }

    /// Direct nested-loop convolution.
    fn naive_conv(x: &[f64], w: &[f64], bias: &[f64], g: &ConvGeometry) -> Vec<f64> {
        let (gh, gw) = (g.grid_h(), g.grid_w());
        let mut y = vec![0.0; g.grid_len()];
        for o in 0..g.grid_channels {
            for oy in 0..gh {
                for ox in 0..gw {
                    let mut acc = bias[o];
                    for c in 0..g.image_channels {
                        for ki in 0..g.kernel {
                            for kj in 0..g.kernel {
                                let yy = (oy * g.stride + ki) as isize - g.padding as isize;
                                let xx = (ox * g.stride + kj) as isize - g.padding as isize;
                                if yy < 0 || xx < 0 || yy >= g.image_h as isize || xx >= g.image_w as isize {
                                    continue;
                                }
                                let wi = ((o * g.image_channels + c) * g.kernel + ki) * g.kernel + kj;
                                acc += w[wi] * x[(c * g.image_h + yy as usize) * g.image_w + xx as usize];
                            }
                        }
                    }
                    y[(o * gh + oy) * gw + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = geometry(2, 3, 6);
        let net: Network<f64> = Network::new("c", vec![Layer::Conv2d(g)], &mut rng);
        let x: Vec<f64> = (0..g.image_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = net.forward(&Matrix::from_vec(1, x.len(), x.clone()));
        let expected = naive_conv(&x, &net.params[0].data, &net.params[1].data, &g);
        for (a, b) in y.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), u> == <x, convT(u)> when both share weights and biases are zero.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = geometry(2, 3, 8);
        let conv: Network<f64> = Network::new("c", vec![Layer::Conv2d(g)], &mut rng);
        let mut tconv: Network<f64> = Network::zeroed("t", vec![Layer::ConvTranspose2d(g)]);
        tconv.params[0].data = conv.params[0].data.clone();
        let x: Vec<f64> = (0..g.image_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..g.grid_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cx = conv.forward(&Matrix::from_vec(1, x.len(), x.clone()));
        let tu = tconv.forward(&Matrix::from_vec(1, u.len(), u.clone()));
        let lhs: f64 = cx.data().iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(tu.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn shapes_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g1 = geometry(1, 4, 8);
        let net: Network<f32> = Network::new(
            "e",
            vec![
                Layer::Conv2d(g1),
                Layer::LeakyRelu { slope: 0.2 },
                Layer::Linear {
                    inputs: 4 * 16,
                    outputs: 3,
                },
            ],
            &mut rng,
        );
        assert_eq!(net.input_dim(), 64);
        assert_eq!(net.output_dim(), 3);
        assert_eq!(net.params.len(), 4);
        let y = net.forward(&Matrix::zeros(5, 64));
        assert_eq!((y.rows(), y.cols()), (5, 3));
    }

    #[test]
    #[should_panic(expected = "expects")]
    fn mismatched_layers_panic() {
        let _: Network<f32> = Network::zeroed(
            "bad",
            vec![
                Layer::Linear { inputs: 2, outputs: 3 },
                Layer::Linear { inputs: 4, outputs: 1 },
            ],
        );
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
