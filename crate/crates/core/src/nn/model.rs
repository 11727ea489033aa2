use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng as _;
use rayon::prelude::*;

use super::{HashSpec, ModelConfig, ModelError, Parameters, Scalar};
use crate::rng::{self, Rng};
use crate::textenc::EncodedInput;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Whether dropout is active. Train-mode masks for batch entry `i` come from
/// the stream keyed by `(seed, 0, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Configured network: config, hash constants and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub hash: HashSpec,
    pub params: Parameters<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `batch × label_count`, each strictly inside (0, 1).
    pub probs: Array2<f64>,
    /// `batch × hidden_dim` pooled representation fed to the head.
    pub pooled: Array2<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `max(x,0) - x*y + ln(1 + exp(-|x|))`.
pub fn bce_with_logits<T: Scalar>(logit: T, target: T) -> T {
    let zero = T::zero();
    logit.max(zero) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over all entries. Probabilities are clipped to
/// `[1e-7, 1 - 1e-7]` and evaluated through their logits.
pub fn bce_loss(probs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64, ModelError> {
    if probs.shape() != targets.shape() {
        return Err(ModelError::ShapeMismatch(format!("probs {:?} vs targets {:?}", probs.shape(), targets.shape())));
    }
    if probs.is_empty() {
        return Err(ModelError::ShapeMismatch("empty batch".into()));
    }
    let sum: f64 = Zip::from(probs).and(targets).fold(0.0, |acc, &p, &y| {
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        acc + bce_with_logits((p / (1.0 - p)).ln(), y)
    });
    Ok(sum / probs.len() as f64)
}

struct LnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

fn layer_norm<T: Scalar>(x: &Array2<T>, scale: &Array1<T>, offset: &Array1<T>) -> (Array2<T>, LnCache<T>) {
    let n = T::lit(x.ncols() as f64);
    let eps = T::lit(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / n;
        *is = T::one() / (var + eps).sqrt();
        let s = *is;
        row.mapv_inplace(|v| v * s);
    }
    let y = &xhat * scale + offset;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_back<T: Scalar>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    scale: &Array1<T>,
    dscale: &mut Array1<T>,
    doffset: &mut Array1<T>,
) -> Array2<T> {
    *dscale += &(dy * &cache.xhat).sum_axis(Axis(0));
    *doffset += &dy.sum_axis(Axis(0));
    let n = T::lit(dy.ncols() as f64);
    let dxhat = dy * scale;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / n;
        let mean_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / n;
        let is = cache.inv_std[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = is * (g[j] - mean_g - xh[j] * mean_gx);
        }
    }
    dx
}

fn gelu<T: Scalar>(u: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_C) * (u + T::lit(GELU_A) * u * u * u);
    half * u * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(u: T) -> T {
    let half = T::lit(0.5);
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let t = (c * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * u * u)
}

fn dropout_mask<T: Scalar>(shape: (usize, usize), p: f64, rng: &mut Option<&mut Rng>) -> Option<Array2<T>> {
    let rng = rng.as_deref_mut()?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - p));
    Some(Array2::from_shape_fn(shape, |_| if rng.random_bool(p) { T::zero() } else { keep }))
}

fn outer<T: Scalar>(a: &Array1<T>, b: &Array1<T>) -> Array2<T> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}

struct LayerCache<T> {
    input: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    attn: Vec<Array2<T>>,
    ctx: Array2<T>,
    drop_attn: Option<Array2<T>>,
    ln1: LnCache<T>,
    h1: Array2<T>,
    u: Array2<T>,
    act: Array2<T>,
    drop_ffn: Option<Array2<T>>,
    ln2: LnCache<T>,
}

/// Everything the backward pass needs from one record's forward pass.
pub struct RecordTrace<T> {
    buckets: Vec<usize>,
    mask: Vec<u8>,
    drop_embed: Option<Array2<T>>,
    group_counts: Vec<usize>,
    pooled_input: Array2<T>,
    downsample_ln: LnCache<T>,
    layers: Vec<LayerCache<T>>,
    top: Array1<T>,
    pub pooled: Array1<T>,
    drop_pool: Option<Array2<T>>,
    pub logits: Array1<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, params: Parameters<T>) -> Result<Self, ModelError> {
        config.validate()?;
        params.check_shapes(&config)?;
        let hash = HashSpec::standard(config.num_hashes);
        Ok(Self { config, hash, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = Parameters::init(&config, seed)?;
        Self::new(config, params)
    }

    /// Forward pass over one encoded input. Dropout is applied iff `rng` is given.
    pub fn forward_record(
        &self,
        input: &EncodedInput,
        mut rng: Option<&mut Rng>,
    ) -> Result<RecordTrace<T>, ModelError> {
        let cfg = &self.config;
        let p = &self.params;
        let len = cfg.max_len;
        if input.token_ids.len() != len || input.attention_mask.len() != len {
            return Err(ModelError::ShapeMismatch(format!(
                "input length {} but max_len is {len}",
                input.token_ids.len()
            )));
        }
        let d = cfg.hidden_dim;
        let kk = cfg.num_hashes;
        let sd = cfg.slice_dim();
        let rate = cfg.downsample_rate;
        let groups = cfg.groups();
        let dp = cfg.dropout_p;

        // Hash embeddings plus positions.
        let mut buckets = vec![0usize; len * kk];
        let mut emb = Array2::<T>::zeros((len, d));
        for t in 0..len {
            if input.attention_mask[t] == 0 {
                continue;
            }
            let cp = input.token_ids[t];
            let mut row = emb.row_mut(t);
            for k in 0..kk {
                let b = self.hash.bucket(k, cp, cfg.hash_buckets);
                buckets[t * kk + k] = b;
                row.slice_mut(s![k * sd..(k + 1) * sd]).assign(&p.hash_tables[k].row(b));
            }
            row += &p.positions.row(t);
        }
        let drop_embed = dropout_mask::<T>((len, d), dp, &mut rng);
        if let Some(m) = &drop_embed {
            emb *= m;
        }

        // Mask-aware mean over groups of `rate` characters.
        let mut pooled_input = Array2::<T>::zeros((groups, d));
        let mut group_counts = vec![0usize; groups];
        for t in 0..len {
            if input.attention_mask[t] == 1 {
                let g = t / rate;
                group_counts[g] += 1;
                let mut row = pooled_input.row_mut(g);
                row += &emb.row(t);
            }
        }
        for (g, &c) in group_counts.iter().enumerate() {
            if c > 0 {
                let inv = T::one() / T::lit(c as f64);
                pooled_input.row_mut(g).mapv_inplace(|v| v * inv);
            }
        }
        let valid: Vec<bool> = group_counts.iter().map(|&c| c > 0).collect();
        let projected = pooled_input.dot(&p.downsample) + &p.downsample_bias;
        let (mut h, downsample_ln) = layer_norm(&projected, &p.downsample_ln_scale, &p.downsample_ln_offset);

        let heads = cfg.num_heads;
        let hd = cfg.head_dim();
        let scale = T::one() / T::lit(hd as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for lp in &p.layers {
            let q = h.dot(&lp.query);
            let k = h.dot(&lp.key);
            let v = h.dot(&lp.value);
            let mut ctx = Array2::<T>::zeros((groups, d));
            let mut attn = Vec::with_capacity(heads);
            for hi in 0..heads {
                let cols = s![.., hi * hd..(hi + 1) * hd];
                let mut a = q.slice(cols).dot(&k.slice(cols).t());
                for mut row in a.axis_iter_mut(Axis(0)) {
                    let mut mx = T::neg_infinity();
                    for (j, x) in row.iter_mut().enumerate() {
                        *x *= scale;
                        if valid[j] && *x > mx {
                            mx = *x;
                        }
                    }
                    let mut sum = T::zero();
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = if valid[j] { (*x - mx).exp() } else { T::zero() };
                        sum += *x;
                    }
                    row.mapv_inplace(|x| x / sum);
                }
                ctx.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
                attn.push(a);
            }
            let mut att_out = ctx.dot(&lp.output);
            let drop_attn = dropout_mask::<T>((groups, d), dp, &mut rng);
            if let Some(m) = &drop_attn {
                att_out *= m;
            }
            let (h1, ln1) = layer_norm(&(&h + &att_out), &lp.ln1_scale, &lp.ln1_offset);
            let u = h1.dot(&lp.ffn_in) + &lp.ffn_in_bias;
            let act = u.mapv(gelu);
            let mut ffn = act.dot(&lp.ffn_out) + &lp.ffn_out_bias;
            let drop_ffn = dropout_mask::<T>((groups, d), dp, &mut rng);
            if let Some(m) = &drop_ffn {
                ffn *= m;
            }
            let (h2, ln2) = layer_norm(&(&h1 + &ffn), &lp.ln2_scale, &lp.ln2_offset);
            layers.push(LayerCache { input: h, q, k, v, attn, ctx, drop_attn, ln1, h1, u, act, drop_ffn, ln2 });
            h = h2;
        }

        let top = h.row(0).to_owned();
        let pooled = (top.dot(&p.pooler) + &p.pooler_bias).mapv(|x| x.tanh());
        let drop_pool = dropout_mask::<T>((1, d), dp, &mut rng);
        let head_in = match &drop_pool {
            Some(m) => &pooled * &m.row(0),
            None => pooled.clone(),
        };
        let logits = head_in.dot(&p.head) + &p.head_bias;

        Ok(RecordTrace {
            buckets,
            mask: input.attention_mask.clone(),
            drop_embed,
            group_counts,
            pooled_input,
            downsample_ln,
            layers,
            top,
            pooled,
            drop_pool,
            logits,
        })
    }

    /// Loss (mean over labels) and parameter gradients for one traced record.
    pub fn backward_record(&self, trace: &RecordTrace<T>, targets: &[T]) -> Result<(T, Parameters<T>), ModelError> {
        let cfg = &self.config;
        let p = &self.params;
        let nl = cfg.label_count;
        if targets.len() != nl {
            return Err(ModelError::ShapeMismatch(format!("{} targets for {nl} labels", targets.len())));
        }
        let inv_l = T::one() / T::lit(nl as f64);
        let mut loss = T::zero();
        let mut dlogits = Array1::<T>::zeros(nl);
        for j in 0..nl {
            let x = trace.logits[j];
            loss += bce_with_logits(x, targets[j]);
            let s = T::one() / (T::one() + (-x).exp());
            dlogits[j] = (s - targets[j]) * inv_l;
        }
        loss *= inv_l;

        let mut g = Parameters::<T>::zeros(cfg);
        let head_in = match &trace.drop_pool {
            Some(m) => &trace.pooled * &m.row(0),
            None => trace.pooled.clone(),
        };
        g.head = outer(&head_in, &dlogits);
        g.head_bias = dlogits.clone();
        let mut dpooled = p.head.dot(&dlogits);
        if let Some(m) = &trace.drop_pool {
            dpooled *= &m.row(0);
        }
        let dpre = &dpooled * &trace.pooled.mapv(|z| T::one() - z * z);
        g.pooler = outer(&trace.top, &dpre);
        g.pooler_bias = dpre.clone();
        let dtop = p.pooler.dot(&dpre);

        let groups = cfg.groups();
        let d = cfg.hidden_dim;
        let hd = cfg.head_dim();
        let scale = T::one() / T::lit(hd as f64).sqrt();
        let mut dh = Array2::<T>::zeros((groups, d));
        dh.row_mut(0).assign(&dtop);

        for (li, (lc, lp)) in trace.layers.iter().zip(&p.layers).enumerate().rev() {
            let gl = &mut g.layers[li];
            let dr2 = layer_norm_back(&dh, &lc.ln2, &lp.ln2_scale, &mut gl.ln2_scale, &mut gl.ln2_offset);
            let mut dffn = dr2.clone();
            if let Some(m) = &lc.drop_ffn {
                dffn *= m;
            }
            gl.ffn_out = lc.act.t().dot(&dffn);
            gl.ffn_out_bias = dffn.sum_axis(Axis(0));
            let dact = dffn.dot(&lp.ffn_out.t());
            let du = &dact * &lc.u.mapv(gelu_grad);
            gl.ffn_in = lc.h1.t().dot(&du);
            gl.ffn_in_bias = du.sum_axis(Axis(0));
            let dh1 = dr2 + du.dot(&lp.ffn_in.t());

            let dr1 = layer_norm_back(&dh1, &lc.ln1, &lp.ln1_scale, &mut gl.ln1_scale, &mut gl.ln1_offset);
            let mut datt = dr1.clone();
            if let Some(m) = &lc.drop_attn {
                datt *= m;
            }
            gl.output = lc.ctx.t().dot(&datt);
            let dctx = datt.dot(&lp.output.t());
            let mut dq = Array2::<T>::zeros((groups, d));
            let mut dk = Array2::<T>::zeros((groups, d));
            let mut dv = Array2::<T>::zeros((groups, d));
            for (hi, a) in lc.attn.iter().enumerate() {
                let cols = s![.., hi * hd..(hi + 1) * hd];
                let dctx_h = dctx.slice(cols);
                let da = dctx_h.dot(&lc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&a.t().dot(&dctx_h));
                let mut ds = Array2::<T>::zeros(a.raw_dim());
                for i in 0..groups {
                    let dot = a.row(i).dot(&da.row(i));
                    for j in 0..groups {
                        ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot) * scale;
                    }
                }
                dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
            }
            gl.query = lc.input.t().dot(&dq);
            gl.key = lc.input.t().dot(&dk);
            gl.value = lc.input.t().dot(&dv);
            dh = dr1 + dq.dot(&lp.query.t()) + dk.dot(&lp.key.t()) + dv.dot(&lp.value.t());
        }

        let dh = layer_norm_back(
            &dh,
            &trace.downsample_ln,
            &p.downsample_ln_scale,
            &mut g.downsample_ln_scale,
            &mut g.downsample_ln_offset,
        );
        g.downsample = trace.pooled_input.t().dot(&dh);
        g.downsample_bias = dh.sum_axis(Axis(0));
        let dpooled_input = dh.dot(&p.downsample.t());

        let kk = cfg.num_hashes;
        let sd = cfg.slice_dim();
        for t in 0..cfg.max_len {
            if trace.mask[t] == 0 {
                continue;
            }
            let grp = t / cfg.downsample_rate;
            let inv = T::one() / T::lit(trace.group_counts[grp] as f64);
            let mut de = dpooled_input.row(grp).mapv(|v| v * inv);
            if let Some(m) = &trace.drop_embed {
                de *= &m.row(t);
            }
            let mut prow = g.positions.row_mut(t);
            prow += &de;
            for k in 0..kk {
                let b = trace.buckets[t * kk + k];
                let mut trow = g.hash_tables[k].row_mut(b);
                trow += &de.slice(s![k * sd..(k + 1) * sd]);
            }
        }
        g.standardize();
        Ok((loss, g))
    }

    /// Probabilities and pooled vectors for a batch.
    pub fn forward(&self, batch: &[EncodedInput], mode: Mode) -> Result<ForwardOutput, ModelError> {
        let traces: Vec<RecordTrace<T>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, x)| match mode {
                Mode::Eval => self.forward_record(x, None),
                Mode::Train { seed } => self.forward_record(x, Some(&mut rng::keyed(seed, 0, i as u64))),
            })
            .collect::<Result<_, _>>()?;
        let n = batch.len();
        let mut probs = Array2::zeros((n, self.config.label_count));
        let mut pooled = Array2::zeros((n, self.config.hidden_dim));
        for (i, tr) in traces.iter().enumerate() {
            probs.row_mut(i).assign(&tr.logits.mapv(|x| sigmoid(x.as_f64())));
            pooled.row_mut(i).assign(&tr.pooled.mapv(|x| x.as_f64()));
        }
        Ok(ForwardOutput { probs, pooled })
    }

    /// Mean loss and mean gradients over a batch. Per-record gradients are
    /// summed in batch order so the result does not depend on thread count.
    pub fn backward(
        &self,
        batch: &[EncodedInput],
        targets: &Array2<T>,
        mode: Mode,
    ) -> Result<(T, Parameters<T>), ModelError> {
        if targets.nrows() != batch.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} target rows for {} inputs",
                targets.nrows(),
                batch.len()
            )));
        }
        if batch.is_empty() {
            return Err(ModelError::EmptyDataset("batch"));
        }
        let per: Vec<(T, Parameters<T>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let tr = match mode {
                    Mode::Eval => self.forward_record(x, None)?,
                    Mode::Train { seed } => self.forward_record(x, Some(&mut rng::keyed(seed, 0, i as u64)))?,
                };
                let y = targets.row(i).to_vec();
                self.backward_record(&tr, &y)
            })
            .collect::<Result<_, _>>()?;
        Ok(reduce_mean(per, &self.config))
    }
}

/// Ordered mean of per-record `(loss, grads)`.
pub(crate) fn reduce_mean<T: Scalar>(per: Vec<(T, Parameters<T>)>, cfg: &ModelConfig) -> (T, Parameters<T>) {
    let n = T::lit(per.len() as f64);
    let mut loss = T::zero();
    let mut acc = Parameters::zeros(cfg);
    for (l, g) in &per {
        loss += *l;
        acc.add_assign(g);
    }
    acc.scale(T::one() / n);
    (loss / n, acc)
}
