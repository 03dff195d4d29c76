use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Variant};
use crate::numerics::{
    conv2d, conv2d_transpose, Activation, DenseMatrix, FeatureMap, Kernel, Padding,
};
use crate::{Error, Result};

const SE_INIT_SCALE: f64 = 1e-4;

/// A stride-1, same-padded convolution (or transposed convolution) layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: Kernel,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub transpose: bool,
}

impl ConvLayer {
    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if self.transpose {
            conv2d_transpose(
                input,
                &self.kernel,
                &self.bias,
                1,
                Padding::Same,
                (input.height, input.width),
                self.activation,
            )
        } else {
            conv2d(input, &self.kernel, &self.bias, 1, Padding::Same, self.activation)
        }
    }

    fn glorot(rng: &mut ChaCha8Rng, size: usize, cin: usize, cout: usize, activation: Activation, transpose: bool) -> Self {
        let fan = (size * size * (cin + cout)) as f64;
        let s = (6.0 / fan).sqrt();
        let weights = (0..size * size * cin * cout)
            .map(|_| rng.random_range(-s..=s))
            .collect();
        let kernel = Kernel {
            size,
            in_channels: cin,
            out_channels: cout,
            weights,
        };
        let bias_len = if transpose { cin } else { cout };
        ConvLayer {
            kernel,
            bias: vec![0.0; bias_len],
            activation,
            transpose,
        }
    }
}

/// Encoder and decoder stacks of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub encoder: Vec<ConvLayer>,
    pub decoder: Vec<ConvLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiBranchAutoencoder {
    pub config: ModelConfig,
    /// Number of samples the self-expressive layer(s) are sized for.
    pub samples: usize,
    pub branches: Vec<Branch>,
    /// One matrix per modality for `drogsure`, a single shared one otherwise.
    pub coeffs: Vec<DenseMatrix>,
}

/// Name and length of one parameter block, in declaration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub len: usize,
}

pub fn build_model(config: &ModelConfig, samples: usize) -> Result<MultiBranchAutoencoder> {
    config.validate()?;
    if samples < 2 {
        return Err(Error::Config(format!("need at least 2 samples, got {samples}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let t_count = config.modalities;
    let specs = &config.encoder_layers;
    let latent_channels = config.latent_channels();
    let mut branches = Vec::with_capacity(t_count);
    for _ in 0..t_count {
        let mut encoder = Vec::with_capacity(specs.len());
        let mut cin = 1;
        for spec in specs {
            encoder.push(ConvLayer::glorot(&mut rng, spec.kernel, cin, spec.filters, Activation::Relu, false));
            cin = spec.filters;
        }
        // Decoder mirrors the encoder; a transposed layer's kernel is stored as
        // (k, k, out, in) so that it is the adjoint of a forward layer.
        let mut channels: Vec<usize> = std::iter::once(1).chain(specs.iter().map(|s| s.filters)).collect();
        if config.variant == Variant::Concat {
            *channels.last_mut().unwrap() = latent_channels * t_count;
        }
        let mut decoder = Vec::with_capacity(specs.len());
        for j in (0..specs.len()).rev() {
            let activation = if j == 0 { Activation::Identity } else { Activation::Relu };
            decoder.push(ConvLayer::glorot(
                &mut rng,
                specs[j].kernel,
                channels[j],
                channels[j + 1],
                activation,
                true,
            ));
        }
        branches.push(Branch { encoder, decoder });
    }
    let coeff_count = match config.variant {
        Variant::Drogsure => t_count,
        Variant::Dmsc | Variant::Concat => 1,
    };
    let coeffs = (0..coeff_count)
        .map(|_| {
            DenseMatrix::from_fn(samples, samples, |i, j| {
                let v = rng.random_range(-SE_INIT_SCALE..=SE_INIT_SCALE);
                if i == j {
                    0.0
                } else {
                    v
                }
            })
        })
        .collect();
    Ok(MultiBranchAutoencoder {
        config: config.clone(),
        samples,
        branches,
        coeffs,
    })
}

impl MultiBranchAutoencoder {
    pub fn modalities(&self) -> usize {
        self.branches.len()
    }

    /// Coefficient matrix used by modality `t`.
    pub fn coeff_for(&self, t: usize) -> &DenseMatrix {
        match self.config.variant {
            Variant::Drogsure => &self.coeffs[t],
            _ => &self.coeffs[0],
        }
    }

    /// Parameter blocks in declaration order: per modality the encoder
    /// kernels/biases then the decoder kernels/biases, then the coefficient
    /// matrices.
    pub fn param_blocks(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        for (t, b) in self.branches.iter().enumerate() {
            for (part, layers) in [("enc", &b.encoder), ("dec", &b.decoder)] {
                for (l, layer) in layers.iter().enumerate() {
                    out.push(ParamBlock {
                        name: format!("{part}{t}.{l}.kernel"),
                        len: layer.kernel.weights.len(),
                    });
                    out.push(ParamBlock {
                        name: format!("{part}{t}.{l}.bias"),
                        len: layer.bias.len(),
                    });
                }
            }
        }
        for (i, w) in self.coeffs.iter().enumerate() {
            out.push(ParamBlock {
                name: format!("coeff{i}"),
                len: w.len(),
            });
        }
        out
    }

    /// Parameter values in the same order as [`param_blocks`](Self::param_blocks).
    /// Coefficient matrices are written row-major.
    pub fn param_values(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for b in &self.branches {
            for layer in b.encoder.iter().chain(&b.decoder) {
                out.push(layer.kernel.weights.clone());
                out.push(layer.bias.clone());
            }
        }
        for w in &self.coeffs {
            out.push(w.transpose().as_slice().to_vec());
        }
        out
    }

    /// Inverse of [`param_values`](Self::param_values).
    pub fn set_param_values(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let blocks = self.param_blocks();
        if values.len() != blocks.len() {
            return Err(Error::Format(format!(
                "expected {} parameter blocks, got {}",
                blocks.len(),
                values.len()
            )));
        }
        for (b, v) in blocks.iter().zip(values) {
            if b.len != v.len() {
                return Err(Error::Format(format!("block {} has {} values, expected {}", b.name, v.len(), b.len)));
            }
        }
        let mut it = values.iter();
        for b in &mut self.branches {
            for layer in b.encoder.iter_mut().chain(b.decoder.iter_mut()) {
                layer.kernel.weights.clone_from(it.next().unwrap());
                layer.bias.clone_from(it.next().unwrap());
            }
        }
        let n = self.samples;
        for w in &mut self.coeffs {
            *w = DenseMatrix::from_row_slice(n, n, it.next().unwrap());
        }
        Ok(())
    }

    pub fn zero_diagonals(&mut self) {
        for w in &mut self.coeffs {
            w.fill_diagonal(0.0);
        }
    }

    fn check_inputs(&self, data: &[FeatureMap]) -> Result<()> {
        if data.len() != self.modalities() {
            return Err(Error::Dimension(format!(
                "model has {} modalities, dataset has {}",
                self.modalities(),
                data.len()
            )));
        }
        for (t, x) in data.iter().enumerate() {
            self.check_modality(t, x)?;
            if x.batch != self.samples {
                return Err(Error::Dimension(format!(
                    "modality {t} has {} samples, self-expressive layer expects {}",
                    x.batch, self.samples
                )));
            }
        }
        Ok(())
    }

    fn check_modality(&self, t: usize, x: &FeatureMap) -> Result<()> {
        if t >= self.modalities() {
            return Err(Error::Dimension(format!("modality {t} out of range")));
        }
        let c = &self.config;
        if x.height != c.height || x.width != c.width || x.channels != 1 {
            return Err(Error::Dimension(format!(
                "modality {t} images are {}x{}x{}, model expects {}x{}x1",
                x.height, x.width, x.channels, c.height, c.width
            )));
        }
        Ok(())
    }
}

pub(crate) fn run_encoder(branch: &Branch, x: &FeatureMap) -> Result<Vec<FeatureMap>> {
    let mut outs: Vec<FeatureMap> = Vec::with_capacity(branch.encoder.len());
    for layer in &branch.encoder {
        let next = layer.forward(outs.last().unwrap_or(x))?;
        outs.push(next);
    }
    Ok(outs)
}

pub(crate) fn run_decoder(branch: &Branch, input: &FeatureMap) -> Result<Vec<FeatureMap>> {
    let mut outs: Vec<FeatureMap> = Vec::with_capacity(branch.decoder.len());
    for layer in &branch.decoder {
        let next = layer.forward(outs.last().unwrap_or(input))?;
        outs.push(next);
    }
    Ok(outs)
}

fn map_to_rows(map: &FeatureMap) -> DenseMatrix {
    DenseMatrix::from_row_slice(map.batch, map.sample_len(), &map.data)
}

pub(crate) fn rows_to_map(m: &DenseMatrix, height: usize, width: usize) -> FeatureMap {
    let channels = m.ncols() / (height * width);
    let data = m.transpose().as_slice().to_vec();
    FeatureMap {
        batch: m.nrows(),
        height,
        width,
        channels,
        data,
    }
}

/// Runs the encoder of branch `t` only.
pub(crate) fn branch_forward(model: &MultiBranchAutoencoder, t: usize, x: &FeatureMap) -> Result<(Vec<FeatureMap>, DenseMatrix)> {
    let enc_out = run_encoder(&model.branches[t], x)?;
    let latent = map_to_rows(enc_out.last().expect("encoder has layers"));
    Ok((enc_out, latent))
}

/// Horizontal concatenation `[L(1) || L(2) || ...]`.
pub(crate) fn concat_codes(latents: &[DenseMatrix]) -> DenseMatrix {
    let n = latents[0].nrows();
    let width: usize = latents.iter().map(|l| l.ncols()).sum();
    let mut out = DenseMatrix::zeros(n, width);
    let mut off = 0;
    for l in latents {
        out.columns_mut(off, l.ncols()).copy_from(l);
        off += l.ncols();
    }
    out
}

/// Splits a matrix over the concatenated code back into per-modality blocks.
pub(crate) fn split_codes(m: &DenseMatrix, widths: &[usize]) -> Vec<DenseMatrix> {
    let mut off = 0;
    widths
        .iter()
        .map(|&w| {
            let block = m.columns(off, w).into_owned();
            off += w;
            block
        })
        .collect()
}

/// Decoder input map for a self-expressed code. For the concatenation network
/// the per-modality blocks of `z` are stacked along the channel axis.
pub(crate) fn decode_map(z: &DenseMatrix, height: usize, width: usize, block_channels: &[usize]) -> FeatureMap {
    if block_channels.len() <= 1 {
        return rows_to_map(z, height, width);
    }
    let total: usize = block_channels.iter().sum();
    let n = z.nrows();
    let mut map = FeatureMap::zeros(n, height, width, total);
    let mut col_base = 0;
    let mut ch_off = 0;
    for &c in block_channels {
        for i in 0..n {
            for px in 0..height * width {
                for k in 0..c {
                    map.data[(i * height * width + px) * total + ch_off + k] = z[(i, col_base + px * c + k)];
                }
            }
        }
        col_base += height * width * c;
        ch_off += c;
    }
    map
}

/// Adjoint of [`decode_map`].
pub(crate) fn decode_map_adjoint(map: &FeatureMap, block_channels: &[usize]) -> DenseMatrix {
    if block_channels.len() <= 1 {
        return map_to_rows(map);
    }
    let (n, hw, total) = (map.batch, map.height * map.width, map.channels);
    let mut z = DenseMatrix::zeros(n, hw * total);
    let mut col_base = 0;
    let mut ch_off = 0;
    for &c in block_channels {
        for i in 0..n {
            for px in 0..hw {
                for k in 0..c {
                    z[(i, col_base + px * c + k)] = map.data[(i * hw + px) * total + ch_off + k];
                }
            }
        }
        col_base += hw * c;
        ch_off += c;
    }
    z
}

/// Latent code `L(t)` (one row per sample) of modality `t`.
pub fn encode(model: &MultiBranchAutoencoder, t: usize, x: &FeatureMap) -> Result<DenseMatrix> {
    model.check_modality(t, x)?;
    Ok(branch_forward(model, t, x)?.1)
}

/// Self-expressed code: row `i` is `Σ_j W[j, i] · L[j]`, i.e. `Wᵀ L`.
pub fn self_express(latent: &DenseMatrix, coeff: &DenseMatrix) -> Result<DenseMatrix> {
    let n = latent.nrows();
    if coeff.nrows() != n || coeff.ncols() != n {
        return Err(Error::Dimension(format!(
            "coefficient matrix is {}x{}, latent has {n} rows",
            coeff.nrows(),
            coeff.ncols()
        )));
    }
    if let Some(i) = (0..n).find(|&i| coeff[(i, i)] != 0.0) {
        return Err(Error::Invariant(format!("coefficient diagonal entry {i} is {}", coeff[(i, i)])));
    }
    Ok(coeff.tr_mul(latent))
}

/// Everything the losses and backpropagation need from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub latents: Vec<DenseMatrix>,
    /// `drogsure`/`dmsc`: one self-expressed code per modality.
    /// `concat`: a single code over the stacked features.
    pub expressed: Vec<DenseMatrix>,
    pub reconstructions: Vec<FeatureMap>,
    /// Stacked code `N` (concatenation network only).
    pub stacked: Option<DenseMatrix>,
}

/// Full forward pass. With `bypass_se` the decoders read the latent codes
/// directly, as during reconstruction-only pretraining.
pub(crate) fn forward_impl(model: &MultiBranchAutoencoder, data: &[FeatureMap], bypass_se: bool) -> Result<ForwardCache> {
    model.check_inputs(data)?;
    let cfg = &model.config;
    let (h, w) = (cfg.height, cfg.width);
    let latents: Vec<DenseMatrix> = data
        .iter()
        .enumerate()
        .map(|(t, x)| Ok(branch_forward(model, t, x)?.1))
        .collect::<Result<_>>()?;

    let mut reconstructions = Vec::with_capacity(data.len());
    let mut expressed = Vec::new();
    let mut stacked = None;
    if cfg.variant == Variant::Concat && !bypass_se {
        let n_mat = concat_codes(&latents);
        let z = self_express(&n_mat, &model.coeffs[0])?;
        let channels = vec![cfg.latent_channels(); data.len()];
        let dec_input = decode_map(&z, h, w, &channels);
        for t in 0..data.len() {
            let mut dec_out = run_decoder(&model.branches[t], &dec_input)?;
            reconstructions.push(dec_out.pop().expect("decoder has layers"));
        }
        expressed.push(z);
        stacked = Some(n_mat);
    } else {
        for (t, latent) in latents.iter().enumerate() {
            let z = if bypass_se {
                latent.clone()
            } else {
                self_express(latent, model.coeff_for(t))?
            };
            let dec_input = if cfg.variant == Variant::Concat {
                // Pretraining the concatenation network: each decoder sees the
                // stacked codes of all modalities.
                decode_map(&concat_codes(&latents), h, w, &vec![cfg.latent_channels(); data.len()])
            } else {
                rows_to_map(&z, h, w)
            };
            let mut dec_out = run_decoder(&model.branches[t], &dec_input)?;
            reconstructions.push(dec_out.pop().expect("decoder has layers"));
            if !bypass_se {
                expressed.push(z);
            }
        }
    }
    Ok(ForwardCache {
        latents,
        expressed,
        reconstructions,
        stacked,
    })
}

/// Encode every modality, apply the self-expressive layer(s) and decode.
pub fn forward(model: &MultiBranchAutoencoder, data: &[FeatureMap]) -> Result<ForwardCache> {
    forward_impl(model, data, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::LayerSpec;

    fn toy_data(seed: u64, t: usize, n: usize, side: usize) -> Vec<FeatureMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t)
            .map(|_| {
                let data = (0..n * side * side).map(|_| rng.random_range(0.0..1.0)).collect();
                FeatureMap::from_vec(n, side, side, 1, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn polarimetric_drogsure_shapes() {
        let cfg = ModelConfig::new(Variant::Drogsure, 5, ModelConfig::polarimetric_encoder(), 6, 6);
        let m = build_model(&cfg, 7).unwrap();
        assert_eq!(m.branches.len(), 5);
        assert_eq!(m.coeffs.len(), 5);
        for b in &m.branches {
            assert_eq!(b.encoder.len(), 3);
            assert_eq!(b.decoder.len(), 3);
            let enc: Vec<_> = b.encoder.iter().map(|l| (l.kernel.out_channels, l.kernel.size)).collect();
            assert_eq!(enc, vec![(5, 3), (7, 1), (15, 1)]);
            let dec: Vec<_> = b.decoder.iter().map(|l| (l.kernel.out_channels, l.kernel.in_channels, l.kernel.size)).collect();
            assert_eq!(dec, vec![(15, 7, 1), (7, 5, 1), (5, 1, 3)]);
            assert_eq!(b.decoder.last().unwrap().activation, Activation::Identity);
        }
        for w in &m.coeffs {
            assert!((0..7).all(|i| w[(i, i)] == 0.0));
            assert!(w.iter().all(|v| v.abs() <= SE_INIT_SCALE));
        }
    }

    #[test]
    fn dmsc_has_one_shared_matrix() {
        let cfg = ModelConfig::new(Variant::Dmsc, 3, ModelConfig::polarimetric_encoder(), 4, 4);
        let m = build_model(&cfg, 10).unwrap();
        assert_eq!(m.coeffs.len(), 1);
        assert_eq!(m.coeffs[0].shape(), (10, 10));
    }

    #[test]
    fn concat_decoder_reads_stacked_channels() {
        let cfg = ModelConfig::new(Variant::Concat, 5, ModelConfig::face_parts_encoder(), 6, 6);
        let m = build_model(&cfg, 4).unwrap();
        assert_eq!(m.coeffs.len(), 1);
        let dec: Vec<_> = m.branches[0]
            .decoder
            .iter()
            .map(|l| (l.kernel.out_channels, l.kernel.in_channels, l.kernel.size))
            .collect();
        assert_eq!(dec, vec![(150, 20, 3), (20, 10, 3), (10, 1, 5)]);
        let data = toy_data(3, 5, 4, 6);
        let cache = forward(&m, &data).unwrap();
        let stacked = cache.stacked.as_ref().unwrap();
        assert_eq!(stacked.ncols(), 5 * cfg.latent_dim());
        assert_eq!(cache.reconstructions[2].shape(), (4, 6, 6, 1));
    }

    #[test]
    fn unsupported_sample_count() {
        let cfg = ModelConfig::new(Variant::Dmsc, 2, ModelConfig::polarimetric_encoder(), 4, 4);
        assert!(build_model(&cfg, 1).is_err());
    }

    #[test]
    fn self_express_permutation_and_zero() {
        let l = DenseMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let swap = DenseMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let z = self_express(&l, &swap).unwrap();
        assert_eq!(z.row(0), l.row(1));
        assert_eq!(z.row(1), l.row(0));
        let zero = self_express(&l, &DenseMatrix::zeros(2, 2)).unwrap();
        assert_eq!(zero, DenseMatrix::zeros(2, 3));
        assert!(matches!(
            self_express(&l, &DenseMatrix::identity(2, 2)),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn self_express_matches_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = DenseMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let mut w = DenseMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        w.fill_diagonal(0.0);
        let z = self_express(&l, &w).unwrap();
        for i in 0..6 {
            for k in 0..4 {
                let direct: f64 = (0..6).map(|j| w[(j, i)] * l[(j, k)]).sum();
                assert!((z[(i, k)] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_latent() {
        let cfg = ModelConfig::new(Variant::Drogsure, 2, ModelConfig::polarimetric_encoder(), 5, 5);
        let m = build_model(&cfg, 3).unwrap();
        let l = encode(&m, 1, &FeatureMap::zeros(3, 5, 5, 1)).unwrap();
        assert!(l.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_encoder_flattens_input() {
        let mut cfg = ModelConfig::new(Variant::Drogsure, 2, vec![LayerSpec::new(1, 1); 2], 4, 4);
        cfg.seed = 1;
        let mut m = build_model(&cfg, 3).unwrap();
        for layer in &mut m.branches[0].encoder {
            layer.kernel.weights = vec![1.0];
        }
        let x = toy_data(8, 1, 3, 4).remove(0);
        let l = encode(&m, 0, &x).unwrap();
        for i in 0..3 {
            assert_eq!(l.row(i).iter().copied().collect::<Vec<_>>(), x.sample(i).to_vec());
        }
    }

    #[test]
    fn permuting_samples_permutes_latent() {
        let cfg = ModelConfig::new(Variant::Dmsc, 2, ModelConfig::polarimetric_encoder(), 5, 5);
        let m = build_model(&cfg, 4).unwrap();
        let x = toy_data(2, 1, 4, 5).remove(0);
        let perm = [2, 0, 3, 1];
        let mut px = x.clone();
        for (dst, &src) in perm.iter().enumerate() {
            let len = x.sample_len();
            px.data[dst * len..(dst + 1) * len].copy_from_slice(x.sample(src));
        }
        let l = encode(&m, 0, &x).unwrap();
        let pl = encode(&m, 0, &px).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(pl.row(dst), l.row(src));
        }
    }

    #[test]
    fn zero_coefficients_decode_bias_only() {
        let cfg = ModelConfig::new(Variant::Drogsure, 2, ModelConfig::polarimetric_encoder(), 5, 5);
        let mut m = build_model(&cfg, 4).unwrap();
        for w in &mut m.coeffs {
            w.fill(0.0);
        }
        for b in &mut m.branches {
            for layer in &mut b.decoder {
                layer.bias.iter_mut().for_each(|v| *v = 0.3);
            }
        }
        let data = toy_data(4, 2, 4, 5);
        let cache = forward(&m, &data).unwrap();
        let zero_code = FeatureMap::zeros(4, 5, 5, cfg.latent_channels());
        let expected = run_decoder(&m.branches[1], &zero_code).unwrap().pop().unwrap();
        assert_eq!(cache.reconstructions[1], expected);
    }

    #[test]
    fn variants_coincide_for_single_modality() {
        let mut a = ModelConfig::new(Variant::Drogsure, 1, ModelConfig::polarimetric_encoder(), 5, 5);
        a.seed = 11;
        let mut b = a.clone();
        b.variant = Variant::Dmsc;
        let ma = build_model(&a, 4).unwrap();
        let mb = build_model(&b, 4).unwrap();
        let data = toy_data(6, 1, 4, 5);
        let ca = forward(&ma, &data).unwrap();
        let cb = forward(&mb, &data).unwrap();
        assert_eq!(ca.reconstructions, cb.reconstructions);
        assert_eq!(ca.expressed, cb.expressed);
    }

    #[test]
    fn decode_map_adjoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = DenseMatrix::from_fn(3, 2 * 2 * 5, |_, _| rng.random_range(-1.0..1.0));
        let map = decode_map(&z, 2, 2, &[2, 3]);
        assert_eq!(map.channels, 5);
        assert_eq!(decode_map_adjoint(&map, &[2, 3]), z);
    }
}
