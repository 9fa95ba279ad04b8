use ndarray::{s, Array1, Array2, Array3, Axis, Zip};
use rand::Rng;

use super::{NnError, SeqBatch, Signal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Linear,
    Relu,
    /// Leaky ReLU with the given negative-side slope.
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const DEFAULT_LEAK: f64 = 0.01;

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu(a) => {
                if z > 0.0 {
                    z
                } else {
                    a * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if z > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }

    /// Whether He (fan-in) initialisation suits this activation; otherwise
    /// Xavier is used.
    fn rectifier(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu(_))
    }

    pub(crate) fn tag(self) -> (u8, f64) {
        match self {
            Activation::Linear => (0, 0.0),
            Activation::Relu => (1, 0.0),
            Activation::LeakyRelu(a) => (2, a),
            Activation::Tanh => (3, 0.0),
            Activation::Sigmoid => (4, 0.0),
        }
    }

    pub(crate) fn from_tag(tag: u8, param: f64) -> Option<Self> {
        Some(match tag {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::LeakyRelu(param),
            3 => Activation::Tanh,
            4 => Activation::Sigmoid,
            _ => return None,
        })
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn uniform_init<R: Rng>(shape: usize, limit: f64, rng: &mut R) -> Vec<f64> {
    (0..shape).map(|_| rng.random_range(-limit..limit)).collect()
}

fn init_limit(act: Activation, fan_in: usize, fan_out: usize) -> f64 {
    if act.rectifier() {
        (6.0 / fan_in as f64).sqrt()
    } else {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

/// Fully connected layer, `y = act(W x + b)` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, act: Activation, rng: &mut R) -> Self {
        let lim = init_limit(act, inputs, outputs);
        Self {
            w: Array2::from_shape_vec((outputs, inputs), uniform_init(inputs * outputs, lim, rng))
                .expect("shape"),
            b: Array1::zeros(outputs),
            act,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    fn preact(&self, x: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        if x.ncols() != self.inputs() {
            return Err(NnError::Shape(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.w.t()) + &self.b)
    }
}

/// 1-D convolution over time with "same" zero padding and stride 1.
/// Kernels have shape `filters x channels x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub w: Array3<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

impl Conv1d {
    pub fn new<R: Rng>(channels: usize, filters: usize, width: usize, act: Activation, rng: &mut R) -> Self {
        assert!(width >= 1, "kernel width must be at least 1");
        let fan_in = channels * width;
        let lim = init_limit(act, fan_in, filters * width);
        Self {
            w: Array3::from_shape_vec((filters, channels, width), uniform_init(filters * fan_in, lim, rng))
                .expect("shape"),
            b: Array1::zeros(filters),
            act,
        }
    }

    pub fn filters(&self) -> usize {
        self.w.dim().0
    }

    pub fn channels(&self) -> usize {
        self.w.dim().1
    }

    pub fn width(&self) -> usize {
        self.w.dim().2
    }

    fn kernel_matrix(&self) -> ndarray::ArrayView2<'_, f64> {
        let (f, c, k) = self.w.dim();
        self.w.view().into_shape_with_order((f, c * k)).expect("standard layout")
    }

    /// Unfolds the packed input into `rows x (channels * width)` patches.
    fn im2col(&self, x: &SeqBatch) -> Array2<f64> {
        let (c, k) = (self.channels(), self.width());
        let pad = (k - 1) / 2;
        let mut cols = Array2::zeros((x.data.nrows(), c * k));
        for (o, &len) in x.offsets().iter().zip(&x.lens) {
            for t in 0..len {
                let mut row = cols.row_mut(o + t);
                for j in 0..k {
                    let src = t as isize + j as isize - pad as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let xr = x.data.row(o + src as usize);
                    for ch in 0..c {
                        row[ch * k + j] = xr[ch];
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, lens: &[usize]) -> Array2<f64> {
        let (c, k) = (self.channels(), self.width());
        let pad = (k - 1) / 2;
        let mut dx = Array2::zeros((dcols.nrows(), c));
        let mut o = 0;
        for &len in lens {
            for t in 0..len {
                let row = dcols.row(o + t);
                for j in 0..k {
                    let src = t as isize + j as isize - pad as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let mut xr = dx.row_mut(o + src as usize);
                    for ch in 0..c {
                        xr[ch] += row[ch * k + j];
                    }
                }
            }
            o += len;
        }
        dx
    }
}

/// Long short-term memory layer returning the final hidden state.
///
/// Gates are packed `[input, forget, cell, output]` along the last axis of
/// `wx` (`in x 4H`), `wh` (`H x 4H`) and `b` (`4H`).
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
}

impl Lstm {
    pub fn new<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let lx = init_limit(Activation::Tanh, inputs, hidden);
        let lh = init_limit(Activation::Tanh, hidden, hidden);
        let mut b = Array1::zeros(4 * hidden);
        // forget gate starts open
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self {
            wx: Array2::from_shape_vec((inputs, 4 * hidden), uniform_init(inputs * 4 * hidden, lx, rng))
                .expect("shape"),
            wh: Array2::from_shape_vec((hidden, 4 * hidden), uniform_init(hidden * 4 * hidden, lh, rng))
                .expect("shape"),
            b,
        }
    }

    pub fn inputs(&self) -> usize {
        self.wx.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.wh.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv1d(Conv1d),
    Lstm(Lstm),
    /// Per-channel mean over time.
    GlobalAvgPool,
}

pub(crate) enum Cache {
    Dense {
        x: Array2<f64>,
        z: Array2<f64>,
    },
    Conv {
        cols: Array2<f64>,
        z: Array2<f64>,
        lens: Vec<usize>,
    },
    Lstm(LstmTape),
    Pool {
        lens: Vec<usize>,
    },
}

fn activate(z: &Array2<f64>, act: Activation) -> Array2<f64> {
    match act {
        Activation::Linear => z.clone(),
        _ => z.mapv(|v| act.apply(v)),
    }
}

fn activation_grad(g: Array2<f64>, z: &Array2<f64>, act: Activation) -> Array2<f64> {
    match act {
        Activation::Linear => g,
        _ => {
            let mut g = g;
            Zip::from(&mut g).and(z).for_each(|gv, &zv| *gv *= act.derivative(zv));
            g
        }
    }
}

fn expect_flat(x: Signal, who: &str) -> Result<Array2<f64>, NnError> {
    match x {
        Signal::Flat(a) => Ok(a),
        Signal::Seq(_) => Err(NnError::Shape(format!("{who} expects flat input, got sequence"))),
    }
}

fn expect_seq(x: Signal, who: &str) -> Result<SeqBatch, NnError> {
    match x {
        Signal::Seq(s) => Ok(s),
        Signal::Flat(_) => Err(NnError::Shape(format!("{who} expects sequence input, got flat"))),
    }
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv1d(_) => "conv1d",
            Layer::Lstm(_) => "lstm",
            Layer::GlobalAvgPool => "global_avg_pool",
        }
    }

    /// (takes a sequence, required width)
    pub(crate) fn input_kind(&self) -> (bool, Option<usize>) {
        match self {
            Layer::Dense(d) => (false, Some(d.inputs())),
            Layer::Conv1d(c) => (true, Some(c.channels())),
            Layer::Lstm(l) => (true, Some(l.inputs())),
            Layer::GlobalAvgPool => (true, None),
        }
    }

    /// (emits a sequence, width or `None` for pass-through)
    pub(crate) fn output_kind(&self) -> (bool, Option<usize>) {
        match self {
            Layer::Dense(d) => (false, Some(d.outputs())),
            Layer::Conv1d(c) => (true, Some(c.filters())),
            Layer::Lstm(l) => (false, Some(l.hidden())),
            Layer::GlobalAvgPool => (false, None),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        fn sl(a: Option<&[f64]>) -> &[f64] {
            a.expect("parameters are kept in standard layout")
        }
        match self {
            Layer::Dense(d) => vec![sl(d.w.as_slice()), sl(d.b.as_slice())],
            Layer::Conv1d(c) => vec![sl(c.w.as_slice()), sl(c.b.as_slice())],
            Layer::Lstm(l) => vec![sl(l.wx.as_slice()), sl(l.wh.as_slice()), sl(l.b.as_slice())],
            Layer::GlobalAvgPool => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        fn sl(a: Option<&mut [f64]>) -> &mut [f64] {
            a.expect("parameters are kept in standard layout")
        }
        match self {
            Layer::Dense(d) => vec![sl(d.w.as_slice_mut()), sl(d.b.as_slice_mut())],
            Layer::Conv1d(c) => vec![sl(c.w.as_slice_mut()), sl(c.b.as_slice_mut())],
            Layer::Lstm(l) => vec![
                sl(l.wx.as_slice_mut()),
                sl(l.wh.as_slice_mut()),
                sl(l.b.as_slice_mut()),
            ],
            Layer::GlobalAvgPool => vec![],
        }
    }

    pub fn forward(&self, x: Signal) -> Result<Signal, NnError> {
        match self {
            Layer::Dense(d) => {
                let z = d.preact(&expect_flat(x, "dense")?)?;
                Ok(Signal::Flat(activate(&z, d.act)))
            }
            Layer::Lstm(_) => Ok(self.forward_cached(x)?.0),
            Layer::Conv1d(c) => {
                let x = expect_seq(x, "conv1d")?;
                let z = conv_preact(c, &x)?;
                Ok(Signal::Seq(SeqBatch {
                    data: activate(&z, c.act),
                    lens: x.lens,
                }))
            }
            Layer::GlobalAvgPool => Ok(Signal::Flat(pool(&expect_seq(x, "pool")?))),
        }
    }

    pub(crate) fn forward_cached(&self, x: Signal) -> Result<(Signal, Cache), NnError> {
        match self {
            Layer::Dense(d) => {
                let x = expect_flat(x, "dense")?;
                let z = d.preact(&x)?;
                let y = activate(&z, d.act);
                Ok((Signal::Flat(y), Cache::Dense { x, z }))
            }
            Layer::Conv1d(c) => {
                let x = expect_seq(x, "conv1d")?;
                check_conv_input(c, &x)?;
                let cols = c.im2col(&x);
                let z = cols.dot(&c.kernel_matrix().t()) + &c.b;
                let y = activate(&z, c.act);
                Ok((
                    Signal::Seq(SeqBatch {
                        data: y,
                        lens: x.lens.clone(),
                    }),
                    Cache::Conv { cols, z, lens: x.lens },
                ))
            }
            Layer::Lstm(l) => lstm_forward(l, expect_seq(x, "lstm")?),
            Layer::GlobalAvgPool => {
                let x = expect_seq(x, "pool")?;
                let y = pool(&x);
                Ok((Signal::Flat(y), Cache::Pool { lens: x.lens }))
            }
        }
    }

    /// Returns the input gradient (when `need_input_grad`) and the parameter
    /// gradients in [`Layer::params`] order.
    pub(crate) fn backward(
        &self,
        cache: Cache,
        grad: Signal,
        need_input_grad: bool,
    ) -> Result<(Option<Signal>, Vec<Vec<f64>>), NnError> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense { x, z }) => {
                let g = expect_flat(grad, "dense backward")?;
                let dz = activation_grad(g, &z, d.act);
                let dw = dz.t().dot(&x);
                let db = dz.sum_axis(Axis(0));
                let dx = need_input_grad.then(|| Signal::Flat(dz.dot(&d.w)));
                Ok((dx, vec![into_vec(dw), db.to_vec()]))
            }
            (Layer::Conv1d(c), Cache::Conv { cols, z, lens }) => {
                let g = expect_seq(grad, "conv1d backward")?;
                let dz = activation_grad(g.data, &z, c.act);
                let dw = dz.t().dot(&cols);
                let db = dz.sum_axis(Axis(0));
                let dx = if need_input_grad {
                    let dcols = dz.dot(&c.kernel_matrix());
                    Some(Signal::Seq(SeqBatch {
                        data: c.col2im(&dcols, &lens),
                        lens,
                    }))
                } else {
                    None
                };
                Ok((dx, vec![into_vec(dw), db.to_vec()]))
            }
            (Layer::Lstm(l), Cache::Lstm(tape)) => {
                lstm_backward(l, tape, expect_flat(grad, "lstm backward")?, need_input_grad)
            }
            (Layer::GlobalAvgPool, Cache::Pool { lens }) => {
                let g = expect_flat(grad, "pool backward")?;
                let total: usize = lens.iter().sum();
                let mut dx = Array2::zeros((total, g.ncols()));
                let mut o = 0;
                for (b, &len) in lens.iter().enumerate() {
                    let row = g.row(b).mapv(|v| v / len as f64);
                    for t in 0..len {
                        dx.row_mut(o + t).assign(&row);
                    }
                    o += len;
                }
                Ok((Some(Signal::Seq(SeqBatch { data: dx, lens })), vec![]))
            }
            _ => Err(NnError::Shape("cache does not match layer".into())),
        }
    }
}

fn into_vec(a: Array2<f64>) -> Vec<f64> {
    if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    }
}

fn check_conv_input(c: &Conv1d, x: &SeqBatch) -> Result<(), NnError> {
    if x.channels() != c.channels() {
        return Err(NnError::Shape(format!(
            "conv1d expects {} channels, got {}",
            c.channels(),
            x.channels()
        )));
    }
    Ok(())
}

fn conv_preact(c: &Conv1d, x: &SeqBatch) -> Result<Array2<f64>, NnError> {
    check_conv_input(c, x)?;
    Ok(c.im2col(x).dot(&c.kernel_matrix().t()) + &c.b)
}

fn pool(x: &SeqBatch) -> Array2<f64> {
    let mut out = Array2::zeros((x.batch_size(), x.channels()));
    for (b, (o, &len)) in x.offsets().iter().zip(&x.lens).enumerate() {
        let seg = x.data.slice(s![*o..*o + len, ..]);
        out.row_mut(b).assign(&(seg.sum_axis(Axis(0)) / len as f64));
    }
    out
}

fn lstm_forward(l: &Lstm, x: SeqBatch) -> Result<(Signal, Cache), NnError> {
    if x.channels() != l.inputs() {
        return Err(NnError::Shape(format!(
            "lstm expects {} inputs, got {}",
            l.inputs(),
            x.channels()
        )));
    }
    let t_len = x
        .uniform_len()
        .ok_or_else(|| NnError::Shape("lstm batch needs equal-length sequences".into()))?;
    let (bsz, h) = (x.batch_size(), l.hidden());
    // input projections for every step in one product; row b*T + t
    let xproj = x.data.dot(&l.wx);
    let mut hs = vec![Array2::<f64>::zeros((bsz, h))];
    let mut cs = vec![Array2::<f64>::zeros((bsz, h))];
    let mut tanh_cs = Vec::with_capacity(t_len);
    let mut gates = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut a = hs[t].dot(&l.wh);
        a += &xproj.slice(s![t..;t_len, ..]);
        a += &l.b;
        let mut c = Array2::<f64>::zeros((bsz, h));
        let mut tc = Array2::<f64>::zeros((bsz, h));
        let mut hn = Array2::<f64>::zeros((bsz, h));
        for b in 0..bsz {
            let mut arow = a.row_mut(b);
            let g = arow.as_slice_mut().expect("contiguous row");
            for v in &mut g[..2 * h] {
                *v = sigmoid(*v);
            }
            for v in &mut g[2 * h..3 * h] {
                *v = v.tanh();
            }
            for v in &mut g[3 * h..] {
                *v = sigmoid(*v);
            }
            let cp = cs[t].row(b);
            let cp = cp.as_slice().expect("contiguous row");
            let mut crow = c.row_mut(b);
            let mut tcrow = tc.row_mut(b);
            let mut hrow = hn.row_mut(b);
            let (cr, tcr, hr) = (
                crow.as_slice_mut().expect("contiguous row"),
                tcrow.as_slice_mut().expect("contiguous row"),
                hrow.as_slice_mut().expect("contiguous row"),
            );
            for j in 0..h {
                let cv = g[h + j] * cp[j] + g[j] * g[2 * h + j];
                let tv = cv.tanh();
                cr[j] = cv;
                tcr[j] = tv;
                hr[j] = g[3 * h + j] * tv;
            }
        }
        cs.push(c);
        hs.push(hn);
        tanh_cs.push(tc);
        gates.push(a);
    }
    let out = hs[t_len].clone();
    Ok((
        Signal::Flat(out),
        Cache::Lstm(LstmTape {
            x: x.data,
            hs,
            cs,
            tanh_cs,
            gates,
            lens: x.lens,
        }),
    ))
}

pub(crate) struct LstmTape {
    x: Array2<f64>,
    hs: Vec<Array2<f64>>,
    cs: Vec<Array2<f64>>,
    tanh_cs: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    lens: Vec<usize>,
}

fn lstm_backward(
    l: &Lstm,
    tape: LstmTape,
    grad: Array2<f64>,
    need_input_grad: bool,
) -> Result<(Option<Signal>, Vec<Vec<f64>>), NnError> {
    let LstmTape {
        x,
        hs,
        cs,
        tanh_cs,
        gates,
        lens,
    } = tape;
    let h = l.hidden();
    let t_len = gates.len();
    let bsz = grad.nrows();
    if grad.ncols() != h || bsz * t_len != x.nrows() {
        return Err(NnError::Shape("lstm output gradient shape".into()));
    }
    // gate pre-activation gradients for every step, row b*T + t
    let mut da_all = Array2::<f64>::zeros((bsz * t_len, 4 * h));
    let mut dh = grad;
    let mut dc = Array2::<f64>::zeros((bsz, h));
    let mut da = Array2::<f64>::zeros((bsz, 4 * h));
    for t in (0..t_len).rev() {
        for b in 0..bsz {
            let grow = gates[t].row(b);
            let g = grow.as_slice().expect("contiguous row");
            let tcrow = tanh_cs[t].row(b);
            let tc = tcrow.as_slice().expect("contiguous row");
            let cprow = cs[t].row(b);
            let cp = cprow.as_slice().expect("contiguous row");
            let dhrow = dh.row(b);
            let dhr = dhrow.as_slice().expect("contiguous row");
            let mut dcrow = dc.row_mut(b);
            let dcr = dcrow.as_slice_mut().expect("contiguous row");
            let mut darow = da.row_mut(b);
            let dar = darow.as_slice_mut().expect("contiguous row");
            for j in 0..h {
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dcv = dcr[j] + dhr[j] * o * (1.0 - tc[j] * tc[j]);
                dar[j] = dcv * gg * i * (1.0 - i);
                dar[h + j] = dcv * cp[j] * f * (1.0 - f);
                dar[2 * h + j] = dcv * i * (1.0 - gg * gg);
                dar[3 * h + j] = dhr[j] * tc[j] * o * (1.0 - o);
                dcr[j] = dcv * f;
            }
        }
        da_all.slice_mut(s![t..;t_len, ..]).assign(&da);
        if t > 0 {
            dh = da.dot(&l.wh.t());
        }
    }
    let mut hprev = Array2::<f64>::zeros((bsz * t_len, h));
    for t in 0..t_len {
        hprev.slice_mut(s![t..;t_len, ..]).assign(&hs[t]);
    }
    let dwx = x.t().dot(&da_all);
    let dwh = hprev.t().dot(&da_all);
    let db = da_all.sum_axis(Axis(0));
    let dx = need_input_grad.then(|| {
        Signal::Seq(SeqBatch {
            data: da_all.dot(&l.wx.t()),
            lens,
        })
    });
    Ok((dx, vec![into_vec(dwx), into_vec(dwh), db.to_vec()]))
}
