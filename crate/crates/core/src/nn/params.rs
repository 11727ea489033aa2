use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError, Scalar};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query: Array2<T>,
    pub key: Array2<T>,
    pub value: Array2<T>,
    pub output: Array2<T>,
    pub ln1_scale: Array1<T>,
    pub ln1_offset: Array1<T>,
    pub ffn_in: Array2<T>,
    pub ffn_in_bias: Array1<T>,
    pub ffn_out: Array2<T>,
    pub ffn_out_bias: Array1<T>,
    pub ln2_scale: Array1<T>,
    pub ln2_offset: Array1<T>,
}

/// All learned tensors. Matrices act on row vectors: `y = x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    /// One `buckets × (d/K)` table per hash function.
    pub hash_tables: Vec<Array2<T>>,
    pub positions: Array2<T>,
    pub downsample: Array2<T>,
    pub downsample_bias: Array1<T>,
    pub downsample_ln_scale: Array1<T>,
    pub downsample_ln_offset: Array1<T>,
    pub layers: Vec<LayerParams<T>>,
    pub pooler: Array2<T>,
    pub pooler_bias: Array1<T>,
    pub head: Array2<T>,
    pub head_bias: Array1<T>,
}

fn zeros2<T: Scalar>(r: usize, c: usize) -> Array2<T> {
    Array2::zeros((r, c))
}

fn ones1<T: Scalar>(n: usize) -> Array1<T> {
    Array1::ones(n)
}

impl<T: Scalar> Parameters<T> {
    /// All-zero parameters shaped for `cfg` (also the gradient accumulator).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.hidden_dim;
        let f = cfg.ffn_dim;
        Self {
            hash_tables: (0..cfg.num_hashes).map(|_| zeros2(cfg.hash_buckets, cfg.slice_dim())).collect(),
            positions: zeros2(cfg.max_len, d),
            downsample: zeros2(d, d),
            downsample_bias: Array1::zeros(d),
            downsample_ln_scale: Array1::zeros(d),
            downsample_ln_offset: Array1::zeros(d),
            layers: (0..cfg.num_layers)
                .map(|_| LayerParams {
                    query: zeros2(d, d),
                    key: zeros2(d, d),
                    value: zeros2(d, d),
                    output: zeros2(d, d),
                    ln1_scale: Array1::zeros(d),
                    ln1_offset: Array1::zeros(d),
                    ffn_in: zeros2(d, f),
                    ffn_in_bias: Array1::zeros(f),
                    ffn_out: zeros2(f, d),
                    ffn_out_bias: Array1::zeros(d),
                    ln2_scale: Array1::zeros(d),
                    ln2_offset: Array1::zeros(d),
                })
                .collect(),
            pooler: zeros2(d, d),
            pooler_bias: Array1::zeros(d),
            head: zeros2(d, cfg.label_count),
            head_bias: Array1::zeros(cfg.label_count),
        }
    }

    /// Truncated-normal weights (std 0.02, cut at two std), zero biases and
    /// unit layer-norm scales.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let mut rng = rng::seeded(seed);
        let normal = Normal::new(0.0f64, 0.02).unwrap();
        let mut draw = |a: &mut [T]| {
            for v in a.iter_mut() {
                let x = loop {
                    let x = normal.sample(&mut rng);
                    if x.abs() <= 0.04 {
                        break x;
                    }
                };
                *v = T::lit(x);
            }
        };
        for t in &mut p.hash_tables {
            draw(t.as_slice_mut().unwrap());
        }
        draw(p.positions.as_slice_mut().unwrap());
        draw(p.downsample.as_slice_mut().unwrap());
        p.downsample_ln_scale = ones1(cfg.hidden_dim);
        for l in &mut p.layers {
            for w in [&mut l.query, &mut l.key, &mut l.value, &mut l.output, &mut l.ffn_in, &mut l.ffn_out] {
                draw(w.as_slice_mut().unwrap());
            }
            l.ln1_scale = ones1(cfg.hidden_dim);
            l.ln2_scale = ones1(cfg.hidden_dim);
        }
        draw(p.pooler.as_slice_mut().unwrap());
        draw(p.head.as_slice_mut().unwrap());
        Ok(p)
    }

    /// Named flat views in a fixed canonical order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        fn m<'a, T>(out: &mut Vec<(String, Vec<usize>, &'a [T])>, name: String, a: &'a Array2<T>) {
            out.push((name, a.shape().to_vec(), a.as_slice().unwrap()));
        }
        fn v<'a, T>(out: &mut Vec<(String, Vec<usize>, &'a [T])>, name: String, a: &'a Array1<T>) {
            out.push((name, a.shape().to_vec(), a.as_slice().unwrap()));
        }
        for (k, t) in self.hash_tables.iter().enumerate() {
            m(&mut out, format!("embed.hash.{k}"), t);
        }
        m(&mut out, "embed.position".into(), &self.positions);
        m(&mut out, "downsample.weight".into(), &self.downsample);
        v(&mut out, "downsample.bias".into(), &self.downsample_bias);
        v(&mut out, "downsample.ln.scale".into(), &self.downsample_ln_scale);
        v(&mut out, "downsample.ln.offset".into(), &self.downsample_ln_offset);
        for (i, l) in self.layers.iter().enumerate() {
            m(&mut out, format!("layers.{i}.attn.query"), &l.query);
            m(&mut out, format!("layers.{i}.attn.key"), &l.key);
            m(&mut out, format!("layers.{i}.attn.value"), &l.value);
            m(&mut out, format!("layers.{i}.attn.output"), &l.output);
            v(&mut out, format!("layers.{i}.ln1.scale"), &l.ln1_scale);
            v(&mut out, format!("layers.{i}.ln1.offset"), &l.ln1_offset);
            m(&mut out, format!("layers.{i}.ffn.in.weight"), &l.ffn_in);
            v(&mut out, format!("layers.{i}.ffn.in.bias"), &l.ffn_in_bias);
            m(&mut out, format!("layers.{i}.ffn.out.weight"), &l.ffn_out);
            v(&mut out, format!("layers.{i}.ffn.out.bias"), &l.ffn_out_bias);
            v(&mut out, format!("layers.{i}.ln2.scale"), &l.ln2_scale);
            v(&mut out, format!("layers.{i}.ln2.offset"), &l.ln2_offset);
        }
        m(&mut out, "pooler.weight".into(), &self.pooler);
        v(&mut out, "pooler.bias".into(), &self.pooler_bias);
        m(&mut out, "head.weight".into(), &self.head);
        v(&mut out, "head.bias".into(), &self.head_bias);
        out
    }

    /// Forces row-major storage on every tensor. Products such as `a.t().dot(b)`
    /// may come back column-major, which the flat views cannot borrow.
    pub fn standardize(&mut self) {
        fn m<T: Clone>(a: &mut Array2<T>) {
            if !a.is_standard_layout() {
                *a = a.as_standard_layout().into_owned();
            }
        }
        fn v<T: Clone>(a: &mut Array1<T>) {
            if !a.is_standard_layout() {
                *a = a.as_standard_layout().into_owned();
            }
        }
        self.hash_tables.iter_mut().for_each(m);
        m(&mut self.positions);
        m(&mut self.downsample);
        v(&mut self.downsample_bias);
        v(&mut self.downsample_ln_scale);
        v(&mut self.downsample_ln_offset);
        for l in &mut self.layers {
            for a in [&mut l.query, &mut l.key, &mut l.value, &mut l.output, &mut l.ffn_in, &mut l.ffn_out] {
                m(a);
            }
            for a in [
                &mut l.ln1_scale,
                &mut l.ln1_offset,
                &mut l.ffn_in_bias,
                &mut l.ffn_out_bias,
                &mut l.ln2_scale,
                &mut l.ln2_offset,
            ] {
                v(a);
            }
        }
        m(&mut self.pooler);
        v(&mut self.pooler_bias);
        m(&mut self.head);
        v(&mut self.head_bias);
    }

    /// Mutable flat views, same order as [`Parameters::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for t in &mut self.hash_tables {
            out.push(t.as_slice_mut().unwrap());
        }
        out.push(self.positions.as_slice_mut().unwrap());
        out.push(self.downsample.as_slice_mut().unwrap());
        out.push(self.downsample_bias.as_slice_mut().unwrap());
        out.push(self.downsample_ln_scale.as_slice_mut().unwrap());
        out.push(self.downsample_ln_offset.as_slice_mut().unwrap());
        for l in &mut self.layers {
            out.push(l.query.as_slice_mut().unwrap());
            out.push(l.key.as_slice_mut().unwrap());
            out.push(l.value.as_slice_mut().unwrap());
            out.push(l.output.as_slice_mut().unwrap());
            out.push(l.ln1_scale.as_slice_mut().unwrap());
            out.push(l.ln1_offset.as_slice_mut().unwrap());
            out.push(l.ffn_in.as_slice_mut().unwrap());
            out.push(l.ffn_in_bias.as_slice_mut().unwrap());
            out.push(l.ffn_out.as_slice_mut().unwrap());
            out.push(l.ffn_out_bias.as_slice_mut().unwrap());
            out.push(l.ln2_scale.as_slice_mut().unwrap());
            out.push(l.ln2_offset.as_slice_mut().unwrap());
        }
        out.push(self.pooler.as_slice_mut().unwrap());
        out.push(self.pooler_bias.as_slice_mut().unwrap());
        out.push(self.head.as_slice_mut().unwrap());
        out.push(self.head_bias.as_slice_mut().unwrap());
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|(n, _, _)| n).collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, _, s)| s.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        let src = other.tensors();
        for (dst, (_, _, s)) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(s) {
                *a += *b;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for dst in self.tensors_mut() {
            for a in dst.iter_mut() {
                *a *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, s)| s.iter().all(|v| v.is_finite()))
    }

    /// Converts element type, e.g. `f32` weights to `f64` for gradient checks.
    pub fn cast<U: Scalar>(&self, cfg: &ModelConfig) -> Parameters<U> {
        let mut out = Parameters::<U>::zeros(cfg);
        let src = self.tensors();
        for (dst, (_, _, s)) in out.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(s) {
                *a = U::lit(b.as_f64());
            }
        }
        out
    }

    /// Checks tensor shapes against a config.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let want = Self::zeros(cfg);
        let a = self.tensors();
        let b = want.tensors();
        if a.len() != b.len() {
            return Err(ModelError::ShapeMismatch(format!("{} tensors, config implies {}", a.len(), b.len())));
        }
        for ((n, s, _), (_, ws, _)) in a.iter().zip(&b) {
            if s != ws {
                return Err(ModelError::ShapeMismatch(format!("{n}: {s:?} vs {ws:?}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::desk(5);
        let a = Parameters::<f32>::init(&cfg, 11).unwrap();
        let b = Parameters::<f32>::init(&cfg, 11).unwrap();
        let bits = |p: &Parameters<f32>| -> Vec<u32> {
            p.tensors().iter().flat_map(|(_, _, s)| s.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let c = Parameters::<f32>::init(&cfg, 12).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn init_shapes_and_ranges() {
        let cfg = ModelConfig::desk(5);
        let p = Parameters::<f32>::init(&cfg, 0).unwrap();
        assert_eq!(p.hash_tables.len(), 4);
        for t in &p.hash_tables {
            assert_eq!(t.shape(), &[512, 16]);
        }
        assert!(p.head_bias.iter().all(|&v| v == 0.0));
        assert!(p.layers[0].ln1_scale.iter().all(|&v| v == 1.0));
        assert!(p.layers[1].ln2_offset.iter().all(|&v| v == 0.0));
        assert!(p.head.iter().all(|v| v.abs() <= 0.04));
        assert!(p.check_shapes(&cfg).is_ok());
        assert!(p.check_shapes(&ModelConfig::desk(6)).is_err());
        let names = p.names();
        assert_eq!(names.len(), p.tensors().len());
        assert_eq!(names[0], "embed.hash.0");
        assert_eq!(names.last().unwrap(), "head.bias");
    }

    #[test]
    fn init_rejects_bad_config() {
        let cfg = ModelConfig { hidden_dim: 63, ..ModelConfig::desk(2) };
        assert!(matches!(Parameters::<f32>::init(&cfg, 0), Err(ModelError::InvalidConfig(_))));
    }
}
