use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, Architecture, DenseParams, Gates, Layer};
use crate::error::{Error, Result};

/// JSON form of a layer: explicit shape and a row-major weight array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDoc {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatesDoc {
    pub u: LayerDoc,
    pub v: LayerDoc,
}

/// JSON form of [`DenseParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParamsDoc {
    pub activation: Activation,
    pub architecture: Architecture,
    pub seed: u64,
    pub layers: Vec<LayerDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<GatesDoc>,
}

impl From<&Layer> for LayerDoc {
    fn from(l: &Layer) -> Self {
        LayerDoc {
            rows: l.out_width(),
            cols: l.in_width(),
            weight: l.weight.iter().copied().collect(),
            bias: l.bias.to_vec(),
        }
    }
}

impl TryFrom<&LayerDoc> for Layer {
    type Error = Error;

    fn try_from(d: &LayerDoc) -> Result<Self> {
        let weight = Array2::from_shape_vec((d.rows, d.cols), d.weight.clone()).map_err(|_| {
            Error::Config(format!(
                "layer declares {}x{} but carries {} weights",
                d.rows,
                d.cols,
                d.weight.len()
            ))
        })?;
        if d.bias.len() != d.rows {
            return Err(Error::Config(format!(
                "layer declares {} rows but carries {} biases",
                d.rows,
                d.bias.len()
            )));
        }
        Ok(Layer {
            weight,
            bias: Array1::from(d.bias.clone()),
        })
    }
}

impl From<&DenseParams> for DenseParamsDoc {
    fn from(p: &DenseParams) -> Self {
        DenseParamsDoc {
            activation: p.activation,
            architecture: p.architecture(),
            seed: p.seed,
            layers: p.layers.iter().map(LayerDoc::from).collect(),
            gates: p.gates.as_ref().map(|g| GatesDoc {
                u: (&g.u).into(),
                v: (&g.v).into(),
            }),
        }
    }
}

impl TryFrom<&DenseParamsDoc> for DenseParams {
    type Error = Error;

    fn try_from(d: &DenseParamsDoc) -> Result<Self> {
        let layers = d.layers.iter().map(Layer::try_from).collect::<Result<Vec<_>>>()?;
        let gates = match (&d.gates, d.architecture) {
            (Some(g), Architecture::Modified) => Some(Gates {
                u: (&g.u).try_into()?,
                v: (&g.v).try_into()?,
            }),
            (None, Architecture::Plain) => None,
            _ => {
                return Err(Error::Config(
                    "architecture tag disagrees with presence of gate layers".into(),
                ))
            }
        };
        let params = DenseParams {
            layers,
            gates,
            activation: d.activation,
            seed: d.seed,
        };
        params.validate()?;
        Ok(params)
    }
}

impl Serialize for DenseParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DenseParamsDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DenseParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = DenseParamsDoc::deserialize(d)?;
        DenseParams::try_from(&doc).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_round_trip_is_exact(seed in any::<u64>(), modified in any::<bool>(), scale in 1e-3f64..1e3) {
            let arch = if modified { Architecture::Modified } else { Architecture::Plain };
            let mut p = DenseParams::init(&[3, 6, 6, 2], Activation::Tanh, arch, seed).unwrap();
            for t in p.tensors_mut() {
                for (i, v) in t.iter_mut().enumerate() {
                    *v = *v * scale + (i as f64) / 7.0;
                }
            }
            let text = serde_json::to_string(&p).unwrap();
            let back: DenseParams = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(p, back);
        }
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let p = DenseParams::init(&[2, 4, 1], Activation::Tanh, Architecture::Plain, 0).unwrap();
        let mut doc = DenseParamsDoc::from(&p);
        doc.layers[1].cols = 3;
        doc.layers[1].weight.pop();
        assert!(DenseParams::try_from(&doc).is_err());

        let mut doc = DenseParamsDoc::from(&p);
        doc.architecture = Architecture::Modified;
        assert!(DenseParams::try_from(&doc).is_err());
    }
}
