//! JSON model files.
//!
//! A file records the scalar type, class names, per-sample input shape, the
//! fitted preprocessing step and either a boosted ensemble or a single
//! network. Floats are written in shortest round-trip form and parsed
//! exactly, so a save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boosting::BoostedEnsemble;
use crate::data::Preprocessing;
use crate::error::{Error, Result};
use crate::network::Sequential;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FORMAT: &str = "gbnet-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "")]
pub enum Model<T: Scalar> {
    Ensemble(BoostedEnsemble<T>),
    Network(Sequential<T>),
}

impl<T: Scalar> Model<T> {
    pub fn num_classes(&self) -> usize {
        match self {
            Model::Ensemble(e) => e.num_classes,
            Model::Network(n) => n.num_outputs(),
        }
    }

    pub fn input_shape(&self) -> Option<&[usize]> {
        match self {
            Model::Ensemble(e) => e.input_shape(),
            Model::Network(n) => Some(n.input_shape()),
        }
    }

    pub fn predict_raw(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Model::Ensemble(e) => e.predict_raw(x),
            Model::Network(n) => n.predict_batched(x, 512),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct ModelFile<T: Scalar> {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub class_names: Vec<String>,
    pub input_shape: Vec<usize>,
    pub preprocessing: Preprocessing,
    pub model: Model<T>,
}

impl<T: Scalar> ModelFile<T> {
    pub fn new(model: Model<T>, class_names: Vec<String>, preprocessing: Preprocessing) -> Result<Self> {
        let input_shape = model
            .input_shape()
            .ok_or_else(|| Error::Usage("cannot save an empty ensemble".into()))?
            .to_vec();
        let file = Self {
            format: FORMAT.into(),
            version: VERSION,
            scalar: T::NAME.into(),
            class_names,
            input_shape,
            preprocessing,
            model,
        };
        file.check()?;
        Ok(file)
    }

    fn check(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Format(format!("not a model file (format {:?})", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Format(format!("unsupported model file version {}", self.version)));
        }
        if self.scalar != T::NAME {
            return Err(Error::Format(format!("model stores {} values, expected {}", self.scalar, T::NAME)));
        }
        let k = self.model.num_classes();
        if self.class_names.len() != k {
            return Err(Error::Format(format!("{} class names for {k} outputs", self.class_names.len())));
        }
        if self.model.input_shape() != Some(self.input_shape.as_slice()) {
            return Err(Error::Format("recorded input shape does not match the model".into()));
        }
        if let Model::Ensemble(e) = &self.model {
            if e.offset.len() != k || e.stages.iter().any(|s| s.num_outputs() != k || s.input_shape() != self.input_shape) {
                return Err(Error::Format("ensemble stages disagree on shape".into()));
            }
        }
        Ok(())
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let file: Self = serde_json::from_slice(bytes).map_err(|e| Error::Format(e.to_string()))?;
        file.check()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let file: Self = serde_json::from_reader(reader).map_err(|e| Error::Format(e.to_string()))?;
        file.check()?;
        Ok(file)
    }
}

/// Reads only the header fields, to pick the scalar type before a full load.
pub fn peek_scalar(path: impl AsRef<Path>) -> Result<String> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        scalar: String,
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let h: Header = serde_json::from_reader(reader).map_err(|e| Error::Format(e.to_string()))?;
    if h.format != FORMAT {
        return Err(Error::Format(format!("not a model file (format {:?})", h.format)));
    }
    Ok(h.scalar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::{boost_fit, BoostConfig};
    use crate::data::{DataKind, Dataset, Standardizer};
    use crate::gradcheck::random_tensor;
    use crate::network::{build_network, ConvStack, TrainConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params_bits<T: Scalar>(net: &Sequential<T>) -> Vec<u64> {
        net.params().iter().flat_map(|p| p.value().data().iter().map(|v| v.widen().to_bits())).collect()
    }

    #[test]
    fn ensemble_round_trip_is_bit_exact() {
        let n = 30;
        let features = random_tensor(&[n, 3], 1);
        let classes: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let names = vec!["x".to_string(), "y".into(), "z".into()];
        let ds = Dataset::new(features, &classes, names.clone(), DataKind::Tabular).unwrap();
        let cfg = BoostConfig {
            iterations: 2,
            tolerance: 0.0,
            stage: TrainConfig { epochs: 3, batch_size: 8, ..TrainConfig::default() },
            ..BoostConfig::default()
        };
        let (ens, _) = boost_fit(&ds, &cfg, None, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let prep = Preprocessing::Standardize(Standardizer::fit(&ds.features));
        let file = ModelFile::new(Model::Ensemble(ens.clone()), names, prep.clone()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        file.save(&path).unwrap();
        let back = ModelFile::<f64>::load(&path).unwrap();
        assert_eq!(back.preprocessing, prep);
        let Model::Ensemble(loaded) = &back.model else { panic!("kind changed") };
        assert_eq!(loaded.stages.len(), ens.stages.len());
        for (a, b) in loaded.stages.iter().zip(&ens.stages) {
            assert_eq!(params_bits(a), params_bits(b));
            let flags = |s: &Sequential<f64>| s.layers().iter().map(|l| l.is_frozen()).collect::<Vec<_>>();
            assert_eq!(flags(a), flags(b));
        }
        assert_eq!(loaded.predict_raw(&ds.features).unwrap(), ens.predict_raw(&ds.features).unwrap());
        assert_eq!(peek_scalar(&path).unwrap(), "f64");
    }

    #[test]
    fn conv_network_round_trip_keeps_running_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = ConvStack { filters: vec![2], dropout: vec![0.25], ..ConvStack::default() };
        let mut net = build_network::<f32, _>(&[4, 4, 1], Some(&conv), &[3], 2, &mut rng).unwrap();
        let x = random_tensor(&[6, 4, 4, 1], 4).cast::<f32>();
        net.forward(&x, crate::layers::Mode::Train, &mut rng).unwrap();
        let file = ModelFile::new(Model::Network(net.clone()), vec!["0".into(), "1".into()], Preprocessing::None).unwrap();
        let mut buf = Vec::new();
        file.to_writer(&mut buf).unwrap();
        let back = ModelFile::<f32>::from_slice(&buf).unwrap();
        let Model::Network(loaded) = back.model else { panic!("kind changed") };
        assert_eq!(serde_json::to_string(&loaded).unwrap(), serde_json::to_string(&net).unwrap());
        assert_eq!(loaded.predict(&x).unwrap(), net.predict(&x).unwrap());
        assert!(matches!(ModelFile::<f64>::from_slice(&buf), Err(Error::Format(_))));
    }

    #[test]
    fn corrupted_files_are_format_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = build_network::<f64, _>(&[2], None, &[3], 2, &mut rng).unwrap();
        let file = ModelFile::new(Model::Network(net), vec!["a".into(), "b".into()], Preprocessing::None).unwrap();
        let mut buf = Vec::new();
        file.to_writer(&mut buf).unwrap();
        for cut in [1, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(ModelFile::<f64>::from_slice(&buf[..cut]), Err(Error::Format(_))));
        }
        let text = String::from_utf8(buf).unwrap();
        let wrong_classes = text.replace("[\"a\",\"b\"]", "[\"a\"]");
        assert!(matches!(ModelFile::<f64>::from_slice(wrong_classes.as_bytes()), Err(Error::Format(_))));
        assert!(matches!(ModelFile::<f64>::from_slice(b"{}"), Err(Error::Format(_))));
    }
}
