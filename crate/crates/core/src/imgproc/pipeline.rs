use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{clahe, identity, laplacian_sharpen, ClaheParams, GrayImage, ImgError};

/// One step of an enhancement pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PipelineStep {
    Identity,
    Sharpen,
    Clahe(ClaheParams),
}

/// An ordered, non-empty list of enhancement steps, applied left to right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub steps: Vec<PipelineStep>,
}

impl PipelineSpec {
    pub fn new(steps: Vec<PipelineStep>) -> Result<Self, ImgError> {
        if steps.is_empty() {
            return Err(ImgError::BadPipeline("pipeline must be non-empty".into()));
        }
        Ok(Self { steps })
    }

    /// The five-pipeline default ensemble: identity, sharpen, CLAHE,
    /// double CLAHE, CLAHE followed by sharpening.
    pub fn default_ensemble(params: ClaheParams) -> Vec<PipelineSpec> {
        vec![
            Self::new(vec![PipelineStep::Identity]).unwrap(),
            Self::new(vec![PipelineStep::Sharpen]).unwrap(),
            Self::new(vec![PipelineStep::Clahe(params)]).unwrap(),
            Self::new(vec![PipelineStep::Clahe(params), PipelineStep::Clahe(params)]).unwrap(),
            Self::new(vec![PipelineStep::Clahe(params), PipelineStep::Sharpen]).unwrap(),
        ]
    }

    /// Parse a comma-separated token list like `"clahe,sharpen"`,
    /// using the supplied CLAHE parameters for every `clahe` token.
    pub fn parse(s: &str, params: ClaheParams) -> Result<Self, ImgError> {
        let steps = s
            .split(',')
            .map(|tok| match tok.trim() {
                "identity" => Ok(PipelineStep::Identity),
                "sharpen" => Ok(PipelineStep::Sharpen),
                "clahe" => Ok(PipelineStep::Clahe(params)),
                other => Err(ImgError::BadPipeline(format!("unknown step '{other}'"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(steps)
    }
}

impl fmt::Display for PipelineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let toks: Vec<&str> = self
            .steps
            .iter()
            .map(|s| match s {
                PipelineStep::Identity => "identity",
                PipelineStep::Sharpen => "sharpen",
                PipelineStep::Clahe(_) => "clahe",
            })
            .collect();
        write!(f, "{}", toks.join(","))
    }
}

impl FromStr for PipelineSpec {
    type Err = ImgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, ClaheParams::default())
    }
}

/// Apply the steps of `spec` left to right.
pub fn apply_pipeline(spec: &PipelineSpec, img: &GrayImage) -> Result<GrayImage, ImgError> {
    let mut cur = img.clone();
    for step in &spec.steps {
        cur = match step {
            PipelineStep::Identity => identity(&cur),
            PipelineStep::Sharpen => laplacian_sharpen(&cur)?,
            PipelineStep::Clahe(p) => clahe(&cur, p)?,
        };
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pipeline() {
        let img = GrayImage::random(8, 8, 3);
        let spec = PipelineSpec::new(vec![PipelineStep::Identity]).unwrap();
        assert_eq!(apply_pipeline(&spec, &img).unwrap(), img);
    }

    #[test]
    fn double_clahe_composes() {
        let img = GrayImage::random(32, 32, 9);
        let p = ClaheParams {
            tiles_x: 2,
            tiles_y: 2,
            clip_limit: Some(2.0),
        };
        let spec = PipelineSpec::new(vec![PipelineStep::Clahe(p), PipelineStep::Clahe(p)]).unwrap();
        let manual = clahe(&clahe(&img, &p).unwrap(), &p).unwrap();
        assert_eq!(apply_pipeline(&spec, &img).unwrap(), manual);
    }

    #[test]
    fn clahe_then_sharpen() {
        let img = GrayImage::random(32, 32, 11);
        let p = ClaheParams::default();
        let spec = PipelineSpec::new(vec![PipelineStep::Clahe(p), PipelineStep::Sharpen]).unwrap();
        let manual = laplacian_sharpen(&clahe(&img, &p).unwrap()).unwrap();
        assert_eq!(apply_pipeline(&spec, &img).unwrap(), manual);
    }

    #[test]
    fn token_round_trip() {
        let spec: PipelineSpec = "clahe,sharpen".parse().unwrap();
        assert_eq!(spec.steps.len(), 2);
        assert_eq!(spec.to_string(), "clahe,sharpen");
        assert!("clahe,frobnicate".parse::<PipelineSpec>().is_err());
        assert!("".parse::<PipelineSpec>().is_err());
    }
}
