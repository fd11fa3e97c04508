//! Visual backbone and scene encoding.
//!
//! The backbone maps a `side × side × 3` image to a `7 × 7 × C` feature map.
//! Target and source crops are pooled to `C`-vectors and concatenated with
//! the standardized relational features into the scene encoding
//! `[target | source | relation]` of length `2·C + 15`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{crop_and_resize, load_image, BoundingBox, RelationalFeatures, SceneSample, StandardizationStats, RELATION_DIM};
use crate::error::{AbenError, Result};
use crate::nn::{he_normal, Tensor};

/// Spatial side of every backbone feature map.
pub const FEATURE_GRID: usize = 7;

/// Anything producing a `7 × 7 × C` map from a `side × side × 3` image.
pub trait VisualBackbone: Send + Sync {
    fn channels(&self) -> usize;
    fn input_side(&self) -> usize;
    fn features(&self, image: &Tensor) -> Result<Tensor>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[3, 3, in, out]`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
}

/// Four strided 3×3 convolutions with ReLU (strides 4, 2, 2, 2), taking a
/// 224-pixel input down to the 7×7 grid. Weights are fixed after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBackbone {
    layers: Vec<ConvLayer>,
    input_side: usize,
}

pub const BACKBONE_STRIDES: [usize; 4] = [4, 2, 2, 2];

impl ConvBackbone {
    /// He-initialized weights, zero biases.
    pub fn new(channels: usize, input_side: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut cin = 3;
        for &stride in &BACKBONE_STRIDES {
            layers.push(ConvLayer {
                weight: he_normal(&mut rng, &[3, 3, cin, channels], 9 * cin),
                bias: vec![0.0; channels],
                stride,
            });
            cin = channels;
        }
        Self::from_layers(layers, input_side)
    }

    pub fn from_layers(layers: Vec<ConvLayer>, input_side: usize) -> Result<Self> {
        let mut side = input_side;
        let mut cin = 3;
        for (i, l) in layers.iter().enumerate() {
            let s = l.weight.shape();
            if s.len() != 4 || s[0] != 3 || s[1] != 3 || s[2] != cin || l.bias.len() != s[3] || l.stride == 0 {
                return Err(AbenError::Shape(format!("backbone layer {i} has kernel {s:?}")));
            }
            cin = s[3];
            side = (side - 1) / l.stride + 1;
        }
        if side != FEATURE_GRID {
            return Err(AbenError::Shape(format!("backbone maps {input_side}px to {side}x{side}, expected 7x7")));
        }
        Ok(Self { layers, input_side })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }
}

// Strided 3×3 convolution with one pixel of zero padding, then ReLU.
fn conv_relu(input: &Tensor, layer: &ConvLayer) -> Tensor {
    let [h, w, ci]: [usize; 3] = input.shape().try_into().unwrap();
    let co = layer.bias.len();
    let s = layer.stride;
    let (oh, ow) = ((h - 1) / s + 1, (w - 1) / s + 1);
    let mut out = vec![0.0; oh * ow * co];
    let (xd, kd) = (input.data(), layer.weight.data());
    for y in 0..oh {
        for x in 0..ow {
            let o = (y * ow + x) * co;
            out[o..o + co].copy_from_slice(&layer.bias);
            for ky in 0..3 {
                let iy = (y * s + ky) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (x * s + kx) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let i = (iy as usize * w + ix as usize) * ci;
                    let k = (ky * 3 + kx) * ci * co;
                    for c in 0..ci {
                        let v = xd[i + c];
                        if v == 0.0 {
                            continue;
                        }
                        for (ov, &kv) in out[o..o + co].iter_mut().zip(&kd[k + c * co..k + (c + 1) * co]) {
                            *ov += v * kv;
                        }
                    }
                }
            }
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Tensor::from_vec(&[oh, ow, co], out)
}

impl VisualBackbone for ConvBackbone {
    fn channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    fn input_side(&self) -> usize {
        self.input_side
    }

    fn features(&self, image: &Tensor) -> Result<Tensor> {
        let side = self.input_side;
        if image.shape() != [side, side, 3] {
            return Err(AbenError::Shape(format!("backbone expects [{side}, {side}, 3], got {:?}", image.shape())));
        }
        let mut x = image.clone();
        for layer in &self.layers {
            x = conv_relu(&x, layer);
        }
        Ok(x)
    }
}

pub fn extract_visual_features(backbone: &dyn VisualBackbone, image: &Tensor) -> Result<Tensor> {
    backbone.features(image)
}

/// Spatial mean per channel of an `[H, W, C]` map.
pub fn global_average_pool(map: &Tensor) -> Vec<f64> {
    let c = map.last_dim();
    let positions = map.len() / c;
    let mut out = vec![0.0; c];
    for p in 0..positions {
        for (o, v) in out.iter_mut().zip(map.row(p)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= positions as f64);
    out
}

/// 2×2 average pooling with stride 2 over `[H, W, C]`; a trailing odd
/// row/column is dropped.
pub fn avg_pool_2x2(map: &Tensor) -> Tensor {
    let [h, w, c]: [usize; 3] = map.shape().try_into().expect("avg_pool_2x2 expects [H, W, C]");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let src = ((2 * y + dy) * w + 2 * x + dx) * c;
                for k in 0..c {
                    out[(y * ow + x) * c + k] += 0.25 * map.data()[src + k];
                }
            }
        }
    }
    Tensor::from_vec(&[oh, ow, c], out)
}

pub fn encode_region(backbone: &dyn VisualBackbone, image: &Tensor) -> Result<Vec<f64>> {
    Ok(global_average_pool(&backbone.features(image)?))
}

/// `x_f = [target | source | relation]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEncoding {
    pub values: Vec<f64>,
}

impl SceneEncoding {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn scene_encoding_dim(channels: usize) -> usize {
    2 * channels + RELATION_DIM
}

pub fn assemble_scene_encoding(target: &[f64], source: &[f64], relation: &RelationalFeatures) -> Result<SceneEncoding> {
    if target.len() != source.len() {
        return Err(AbenError::Shape(format!("target length {} vs source length {}", target.len(), source.len())));
    }
    let mut values = Vec::with_capacity(scene_encoding_dim(target.len()));
    values.extend_from_slice(target);
    values.extend_from_slice(source);
    values.extend_from_slice(&relation.values);
    if !values.iter().all(|v| v.is_finite()) {
        return Err(AbenError::Numeric("scene encoding has non-finite entries".into()));
    }
    Ok(SceneEncoding { values })
}

/// Model-ready inputs of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFeatures {
    /// Full-image map after 2×2 average pooling: `[3, 3, C]`.
    pub pooled_visual: Tensor,
    pub encoding: SceneEncoding,
}

/// Runs the backbone over the full image and both crops.
pub fn extract_scene_features(
    scene: &SceneSample,
    backbone: &dyn VisualBackbone,
    stats: &StandardizationStats,
) -> Result<SceneFeatures> {
    let image = load_image(&scene.image_path)?;
    if (image.width(), image.height()) != scene.image_dims {
        return Err(AbenError::InvalidGeometry(format!(
            "{} is {}x{}, record says {}x{}",
            scene.image_path.display(),
            image.width(),
            image.height(),
            scene.image_dims.0,
            scene.image_dims.1
        )));
    }
    let side = backbone.input_side() as u32;
    let full = crop_and_resize(&image, &BoundingBox::full(image.width(), image.height()), side)?;
    let target = crop_and_resize(&image, &scene.target_box, side)?;
    let source = crop_and_resize(&image, &scene.source_box, side)?;
    let relation = stats.apply(&scene.relational_features()?);
    let encoding = assemble_scene_encoding(&encode_region(backbone, &target)?, &encode_region(backbone, &source)?, &relation)?;
    Ok(SceneFeatures { pooled_visual: avg_pool_2x2(&backbone.features(&full)?), encoding })
}
