//! Guidance provider selection from `--provider` specs.

use std::str::FromStr;

use lesplat_core::guidance::{
    Capability, FileTargetProvider, GuidanceProvider, PhotometricProvider, RemoteConfig, RemoteProvider, TargetSource,
};

/// Parsed form of `mock`, `tint:R,G,B[,S]`, `files:DIR` or `remote:ADDR`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSpec {
    /// Pulls renders toward the unedited views, so the scene stays put.
    Mock,
    Tint {
        rgb: [f32; 3],
        strength: f32,
    },
    Files(String),
    Remote(String),
}

impl FromStr for ProviderSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "mock" if arg.is_empty() => Ok(ProviderSpec::Mock),
            "tint" => {
                let v: Vec<f32> = arg
                    .split(',')
                    .map(|x| x.trim().parse::<f32>().map_err(|_| format!("bad tint component `{x}`")))
                    .collect::<Result<_, _>>()?;
                if !(v.len() == 3 || v.len() == 4) || v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err("tint takes R,G,B[,strength] with values in [0, 1]".into());
                }
                Ok(ProviderSpec::Tint { rgb: [v[0], v[1], v[2]], strength: v.get(3).copied().unwrap_or(0.5) })
            }
            "files" if !arg.is_empty() => Ok(ProviderSpec::Files(arg.to_string())),
            "remote" if !arg.is_empty() => Ok(ProviderSpec::Remote(arg.to_string())),
            _ => Err(format!("unknown provider `{s}`; expected mock, tint:R,G,B[,S], files:DIR or remote:ADDR")),
        }
    }
}

pub enum BuildError {
    Dataset(lesplat_core::dataset::DatasetError),
    Guidance(lesplat_core::guidance::GuidanceError),
}

impl ProviderSpec {
    pub fn build(&self, capability: Capability) -> Result<Box<dyn GuidanceProvider>, BuildError> {
        Ok(match self {
            ProviderSpec::Mock => Box::new(PhotometricProvider::new(TargetSource::Original, capability)),
            ProviderSpec::Tint { rgb, strength } => {
                Box::new(PhotometricProvider::new(TargetSource::Tint { rgb: *rgb, strength: *strength }, capability))
            }
            ProviderSpec::Files(dir) => Box::new(FileTargetProvider::load(dir, capability).map_err(BuildError::Dataset)?),
            ProviderSpec::Remote(addr) => Box::new(
                RemoteProvider::connect(addr.as_str(), RemoteConfig { required: capability, ..RemoteConfig::default() })
                    .map_err(BuildError::Guidance)?,
            ),
        })
    }
}
