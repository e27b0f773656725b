use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output size `ceil(in / stride)`, zero padding split evenly (extra at the end).
    Same,
    /// No padding.
    Valid,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        kernel: (usize, usize),
        out_channels: usize,
        stride: (usize, usize),
        padding: Padding,
    },
    BatchNorm {
        eps: f64,
        momentum: f64,
    },
    Relu,
    MaxPool {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    FullyConnected {
        out_features: usize,
    },
}

/// Geometry of a convolution on one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

impl ConvGeom {
    pub fn new(
        [in_c, in_h, in_w]: [usize; 3],
        kernel: (usize, usize),
        out_c: usize,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || out_c == 0 {
            return Err(Error::Shape("conv sizes must be positive".into()));
        }
        let ((out_h, ph), (out_w, pw)) = match padding {
            Padding::Same => (same_padding(in_h, kh, sh), same_padding(in_w, kw, sw)),
            Padding::Valid => {
                if in_h < kh || in_w < kw {
                    return Err(Error::Shape(format!(
                        "conv {kh}x{kw} does not fit a {in_h}x{in_w} input"
                    )));
                }
                (((in_h - kh) / sh + 1, 0), ((in_w - kw) / sw + 1, 0))
            }
        };
        Ok(ConvGeom {
            in_c,
            in_h,
            in_w,
            out_c,
            out_h,
            out_w,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
        })
    }
}

impl LayerSpec {
    /// Output sample shape for a given input sample shape.
    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        match *self {
            LayerSpec::Conv {
                kernel,
                out_channels,
                stride,
                padding,
            } => {
                let g = ConvGeom::new(input, kernel, out_channels, stride, padding)?;
                Ok([g.out_c, g.out_h, g.out_w])
            }
            LayerSpec::BatchNorm { eps, momentum } => {
                if !(eps > 0.0 && (0.0..=1.0).contains(&momentum)) {
                    return Err(Error::Shape(format!(
                        "batch norm needs eps > 0 and momentum in [0, 1], got {eps}, {momentum}"
                    )));
                }
                Ok(input)
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::MaxPool { kernel, stride } => {
                let (kh, kw) = kernel;
                let (sh, sw) = stride;
                if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
                    return Err(Error::Shape("pool sizes must be positive".into()));
                }
                if h < kh || w < kw {
                    return Err(Error::Shape(format!(
                        "pool {kh}x{kw} does not fit a {h}x{w} input"
                    )));
                }
                Ok([c, (h - kh) / sh + 1, (w - kw) / sw + 1])
            }
            LayerSpec::FullyConnected { out_features } => {
                if out_features == 0 {
                    return Err(Error::Shape("fc needs at least one output".into()));
                }
                Ok([out_features, 1, 1])
            }
        }
    }

    pub fn is_batch_norm(&self) -> bool {
        matches!(self, LayerSpec::BatchNorm { .. })
    }
}

fn parse_pair(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once('x')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

/// `conv KHxKW OUT [SHxSW] [same|valid]`, `bn [EPS] [MOMENTUM]`, `relu`,
/// `pool KHxKW SHxSW`, `pool all` (max over the whole map), `fc OUT`.
impl std::str::FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad layer `{}`", s.trim()));
        let tokens: Vec<&str> = s.split_whitespace().collect();
        let pair = |i: usize, default: (usize, usize)| -> Result<(usize, usize)> {
            match tokens.get(i) {
                Some(t) => parse_pair(t).ok_or_else(bad),
                None => Ok(default),
            }
        };
        let num = |i: usize| -> Result<usize> {
            tokens.get(i).and_then(|t| t.parse().ok()).ok_or_else(bad)
        };
        let float = |i: usize, default: f64| -> Result<f64> {
            match tokens.get(i) {
                Some(t) => t.parse().map_err(|_| bad()),
                None => Ok(default),
            }
        };
        let spec = match tokens.first().copied() {
            Some("conv") => {
                if tokens.len() < 3 || tokens.len() > 5 {
                    return Err(bad());
                }
                let padding = match tokens.get(4).copied() {
                    None | Some("same") => Padding::Same,
                    Some("valid") => Padding::Valid,
                    Some(_) => return Err(bad()),
                };
                LayerSpec::Conv {
                    kernel: pair(1, (0, 0))?,
                    out_channels: num(2)?,
                    stride: pair(3, (1, 1))?,
                    padding,
                }
            }
            Some("bn") if tokens.len() <= 3 => LayerSpec::BatchNorm {
                eps: float(1, DEFAULT_BN_EPS)?,
                momentum: float(2, DEFAULT_BN_MOMENTUM)?,
            },
            Some("relu") if tokens.len() == 1 => LayerSpec::Relu,
            Some("pool") if tokens.len() == 2 && tokens[1] == "all" => LayerSpec::MaxPool {
                kernel: GLOBAL_POOL,
                stride: (1, 1),
            },
            Some("pool") if tokens.len() == 3 => LayerSpec::MaxPool {
                kernel: pair(1, (0, 0))?,
                stride: pair(2, (0, 0))?,
            },
            Some("fc") if tokens.len() == 2 => LayerSpec::FullyConnected {
                out_features: num(1)?,
            },
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                kernel,
                out_channels,
                stride,
                padding,
            } => write!(
                f,
                "conv {}x{} {} {}x{} {}",
                kernel.0,
                kernel.1,
                out_channels,
                stride.0,
                stride.1,
                match padding {
                    Padding::Same => "same",
                    Padding::Valid => "valid",
                }
            ),
            LayerSpec::BatchNorm { eps, momentum } => write!(f, "bn {eps:e} {momentum}"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::MaxPool { kernel, .. } if *kernel == GLOBAL_POOL => write!(f, "pool all"),
            LayerSpec::MaxPool { kernel, stride } => write!(
                f,
                "pool {}x{} {}x{}",
                kernel.0, kernel.1, stride.0, stride.1
            ),
            LayerSpec::FullyConnected { out_features } => write!(f, "fc {out_features}"),
        }
    }
}

/// Parses `;`-separated layer descriptors.
pub fn parse_layers(s: &str) -> Result<Vec<LayerSpec>> {
    s.split(';')
        .filter(|part| !part.trim().is_empty())
        .map(str::parse)
        .collect()
}

pub fn format_layers(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Layer stack plus input geometry. The last layer must be a
/// fully-connected layer producing one score per class.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

/// Kernel of an unresolved `pool all`; [`NetworkSpec::with_head`] replaces
/// it by the full spatial extent of the incoming map.
pub const GLOBAL_POOL: (usize, usize) = (0, 0);

/// Body of the default architecture, without the class head.
pub const DEFAULT_BODY: &str = "conv 5x7 16 1x1 same; bn; relu; pool 1x3 1x2; \
    conv 3x5 32 1x1 same; bn; relu; pool 2x3 2x2; \
    conv 3x3 64 1x1 same; bn; relu; pool all; \
    fc 256; relu";

impl NetworkSpec {
    /// `body` followed by a `fc classes` head.
    pub fn with_head(input: [usize; 3], mut body: Vec<LayerSpec>, classes: usize) -> Result<Self> {
        body.push(LayerSpec::FullyConnected {
            out_features: classes,
        });
        let mut shape = input;
        for layer in &mut body {
            if let LayerSpec::MaxPool { kernel, .. } = layer {
                if *kernel == GLOBAL_POOL {
                    *kernel = (shape[1], shape[2]);
                }
            }
            match layer.output_shape(shape) {
                Ok(next) => shape = next,
                Err(_) => break,
            }
        }
        let spec = NetworkSpec {
            input,
            layers: body,
            classes,
        };
        spec.shapes()?;
        Ok(spec)
    }

    /// The default architecture on a `3 x 10 x width` kinetogram.
    pub fn default_for(width: usize, classes: usize) -> Result<Self> {
        Self::with_head([3, 10, width], parse_layers(DEFAULT_BODY)?, classes)
    }

    /// Input shape of every layer followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<[usize; 3]>> {
        if self.input.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("empty input shape {:?}", self.input)));
        }
        let mut shapes = vec![self.input];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(*shapes.last().unwrap())
                .map_err(|e| Error::Shape(format!("layer {i} ({layer}): {e}")))?;
            shapes.push(next);
        }
        match self.layers.last() {
            Some(LayerSpec::FullyConnected { out_features }) if *out_features == self.classes => {
                Ok(shapes)
            }
            _ => Err(Error::Shape(format!(
                "last layer must be `fc {}` producing the class scores",
                self.classes
            ))),
        }
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(LayerSpec::is_batch_norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let spec = NetworkSpec::default_for(330, 5).unwrap();
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes[1], [16, 10, 330]);
        assert_eq!(shapes[4], [16, 10, 164]);
        assert_eq!(shapes[8], [32, 5, 81]);
        assert_eq!(shapes[12], [64, 1, 1]);
        assert_eq!(*shapes.last().unwrap(), [5, 1, 1]);
    }

    #[test]
    fn layer_text_round_trip() {
        let layers = parse_layers(DEFAULT_BODY).unwrap();
        assert_eq!(parse_layers(&format_layers(&layers)).unwrap(), layers);
        assert!(parse_layers("conv 3 8").is_err());
        assert!(parse_layers("dropout 0.5").is_err());
    }

    #[test]
    fn global_pool_covers_the_incoming_map() {
        let body = parse_layers("conv 3x3 4 1x1 same; pool 2x2 2x2; pool all; fc 6").unwrap();
        assert_eq!(format_layers(&body[2..3]), "pool all");
        let spec = NetworkSpec::with_head([3, 10, 41], body, 2).unwrap();
        assert_eq!(spec.layers[2], LayerSpec::MaxPool { kernel: (5, 20), stride: (1, 1) });
        assert_eq!(spec.shapes().unwrap()[3], [4, 1, 1]);
    }

    #[test]
    fn head_must_match_classes() {
        let spec = NetworkSpec {
            input: [3, 10, 20],
            layers: vec![LayerSpec::FullyConnected { out_features: 4 }],
            classes: 5,
        };
        assert!(spec.shapes().is_err());
    }

    #[test]
    fn same_padding_strided() {
        let g = ConvGeom::new([1, 10, 11], (3, 4), 2, (2, 3), Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w), (5, 4));
        assert_eq!((g.ph, g.pw), (0, 1));
    }
}
