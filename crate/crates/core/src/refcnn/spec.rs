use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// 3×3 convolution, stride 1, padding 1, ReLU.
    Conv3x3Relu,
    /// 2×2 max-pooling, stride 2.
    MaxPool2x2,
    FcRelu,
    FcSoftmax,
    Dropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output channels (conv) or width (fc); unused for pooling and dropout.
    pub width: usize,
    pub dropout_rate: f64,
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// channels, height, width
    Map(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Map(c, h, w) => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A network architecture in layer-string notation, e.g.
/// `"ccm64 ccm128 cccm256 cccm512 cccm512 fcr4096 fcr4096 fcs1000"`:
/// `c` = 3×3 conv + ReLU, `m` = 2×2 max-pool, `fcr`/`fcs` = fully connected
/// with ReLU / softmax, the number giving the channels of the block.
/// Dropout at `dropout_rate` follows every `fcr` layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: String,
    /// height, width, channels of the input image
    pub input_shape: [usize; 3],
    pub dropout_rate: f64,
    pub layers: Vec<LayerSpec>,
}

/// Desk-scale default: two pooling steps bring the 224×224 image to 56×56
/// before two conv blocks and a small classifier head.
pub const DESK_ARCH: &str = "mm cm8 cm16 fcr32 fcs5";

/// The 16-weight-layer VGG layout with a 5-way head.
pub const VGG16_ARCH: &str = "ccm64 ccm128 cccm256 cccm512 cccm512 fcr4096 fcr4096 fcs5";

impl ModelSpec {
    pub fn parse(arch: &str, input_shape: [usize; 3], dropout_rate: f64) -> Result<Self, ModelError> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(ModelError::InvalidSpec(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let block = Regex::new(r"^([cm]+)(\d+)?$").unwrap();
        let fc = Regex::new(r"^fc([rs])(\d+)$").unwrap();
        let mut layers = Vec::new();
        let mut channels = input_shape[2];
        for token in arch.split_whitespace() {
            if let Some(cap) = fc.captures(token) {
                let width: usize = cap[2].parse().map_err(|_| bad_token(token))?;
                if width == 0 {
                    return Err(bad_token(token));
                }
                if &cap[1] == "r" {
                    layers.push(LayerSpec {
                        kind: LayerKind::FcRelu,
                        width,
                        dropout_rate: 0.0,
                    });
                    if dropout_rate > 0.0 {
                        layers.push(LayerSpec {
                            kind: LayerKind::Dropout,
                            width: 0,
                            dropout_rate,
                        });
                    }
                } else {
                    layers.push(LayerSpec {
                        kind: LayerKind::FcSoftmax,
                        width,
                        dropout_rate: 0.0,
                    });
                }
            } else if let Some(cap) = block.captures(token) {
                let letters = &cap[1];
                let width = match cap.get(2) {
                    Some(n) => n.as_str().parse().map_err(|_| bad_token(token))?,
                    None if !letters.contains('c') => channels,
                    None => return Err(bad_token(token)),
                };
                if width == 0 {
                    return Err(bad_token(token));
                }
                for l in letters.chars() {
                    layers.push(LayerSpec {
                        kind: if l == 'c' {
                            LayerKind::Conv3x3Relu
                        } else {
                            LayerKind::MaxPool2x2
                        },
                        width: if l == 'c' { width } else { 0 },
                        dropout_rate: 0.0,
                    });
                }
                if letters.contains('c') {
                    channels = width;
                }
            } else {
                return Err(bad_token(token));
            }
        }
        let spec = ModelSpec {
            arch: arch.split_whitespace().collect::<Vec<_>>().join(" "),
            input_shape,
            dropout_rate,
            layers,
        };
        spec.shapes()?;
        Ok(spec)
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Activation shapes: `shapes[0]` is the input, `shapes[i + 1]` the
    /// output of layer `i`. Validates the layer chain.
    pub fn shapes(&self) -> Result<Vec<Shape>, ModelError> {
        let [h, w, c] = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(ModelError::InvalidSpec("empty input shape".into()));
        }
        let mut shapes = vec![Shape::Map(c, h, w)];
        for (i, l) in self.layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = match (l.kind, cur) {
                (LayerKind::Conv3x3Relu, Shape::Map(_, h, w)) => Shape::Map(l.width, h, w),
                (LayerKind::MaxPool2x2, Shape::Map(c, h, w)) => {
                    if h < 2 || w < 2 {
                        return Err(ModelError::InvalidSpec(format!(
                            "layer {i}: cannot pool a {h}×{w} map"
                        )));
                    }
                    Shape::Map(c, h / 2, w / 2)
                }
                (LayerKind::FcRelu | LayerKind::FcSoftmax, s) => {
                    let _ = s;
                    Shape::Flat(l.width)
                }
                (LayerKind::Dropout, s) => s,
                (kind, Shape::Flat(_)) => {
                    return Err(ModelError::InvalidSpec(format!(
                        "layer {i}: {kind:?} after a fully connected layer"
                    )))
                }
            };
            if l.kind == LayerKind::FcSoftmax && i + 1 != self.layers.len() {
                return Err(ModelError::InvalidSpec("fcs must be the last layer".into()));
            }
            shapes.push(next);
        }
        match self.layers.last() {
            Some(l) if l.kind == LayerKind::FcSoftmax => Ok(shapes),
            _ => Err(ModelError::InvalidSpec("the last layer must be fcs<classes>".into())),
        }
    }
}

fn bad_token(token: &str) -> ModelError {
    ModelError::InvalidSpec(format!("unrecognized layer token {token:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_vgg16() {
        let spec = ModelSpec::parse(VGG16_ARCH, [224, 224, 3], 0.5).unwrap();
        let convs = spec.layers.iter().filter(|l| l.kind == LayerKind::Conv3x3Relu).count();
        let fcs = spec
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::FcRelu | LayerKind::FcSoftmax))
            .count();
        assert_eq!(convs + fcs, 16);
        let shapes = spec.shapes().unwrap();
        // five pools: 224 -> 7
        assert!(shapes.contains(&Shape::Map(512, 7, 7)));
        assert_eq!(spec.num_classes(), 5);
    }

    #[test]
    fn dropout_follows_hidden_fc() {
        let spec = ModelSpec::parse("cm4 fcr8 fcs5", [8, 8, 3], 0.5).unwrap();
        let kinds: Vec<LayerKind> = spec.layers.iter().map(|l| l.kind).collect();
        use LayerKind::*;
        assert_eq!(kinds, vec![Conv3x3Relu, MaxPool2x2, FcRelu, Dropout, FcSoftmax]);
        let none = ModelSpec::parse("cm4 fcr8 fcs5", [8, 8, 3], 0.0).unwrap();
        assert_eq!(none.layers.len(), 4);
    }

    #[test]
    fn rejects_bad_chains() {
        assert!(ModelSpec::parse("fcr8 c4 fcs5", [8, 8, 3], 0.0).is_err());
        assert!(ModelSpec::parse("cm4 fcr8", [8, 8, 3], 0.0).is_err());
        assert!(ModelSpec::parse("fcs5 fcs5", [8, 8, 3], 0.0).is_err());
        assert!(ModelSpec::parse("mmmm fcs5", [8, 8, 3], 0.0).is_err());
        assert!(ModelSpec::parse("x12 fcs5", [8, 8, 3], 0.0).is_err());
        assert!(ModelSpec::parse("cm fcs5", [8, 8, 3], 0.0).is_err());
    }

    #[test]
    fn desk_default_shape() {
        let spec = ModelSpec::parse(DESK_ARCH, [224, 224, 3], 0.5).unwrap();
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes[2], Shape::Map(3, 56, 56));
    }
}
