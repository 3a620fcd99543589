//! Annotated datasets, either bundled with the crate or read from disk.
//!
//! A dataset directory holds `ground_truth.json` plus at least one of
//! `README.md` (raw input, triggers preprocessing) or `description.txt`, and
//! optionally an `api.json` endpoint catalogue and `fixture_mappings.json`,
//! the API mappings the offline fixture provider answers with.

use std::fs;
use std::path::Path;

use crate::model::{parse_api_catalogue, parse_ground_truth, ApiEndpoint, ApiMapping, GroundTruthDataset, ModelError, ProjectDescription};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub truth: GroundTruthDataset,
    pub readme: Option<String>,
    pub description: Option<String>,
    pub endpoints: Option<Vec<ApiEndpoint>>,
    pub fixture_mappings: Vec<ApiMapping>,
}

struct Bundled {
    id: &'static str,
    truth: &'static str,
    readme: Option<&'static str>,
    description: &'static str,
    api: Option<&'static str>,
    mappings: Option<&'static str>,
}

macro_rules! bundled {
    ($id:literal, readme: $readme:expr, api: $api:expr, mappings: $mappings:expr) => {
        Bundled {
            id: $id,
            truth: include_str!(concat!("../data/datasets/", $id, "/ground_truth.json")),
            readme: $readme,
            description: include_str!(concat!("../data/datasets/", $id, "/description.txt")),
            api: $api,
            mappings: $mappings,
        }
    };
}

const BUNDLED: &[Bundled] = &[
    bundled!("genome_nexus",
        readme: Some(include_str!("../data/datasets/genome_nexus/README.md")), api: None, mappings: None),
    bundled!("gestao_hospital",
        readme: Some(include_str!("../data/datasets/gestao_hospital/README.md")),
        api: Some(include_str!("../data/datasets/gestao_hospital/api.json")),
        mappings: Some(include_str!("../data/datasets/gestao_hospital/fixture_mappings.json"))),
    bundled!("london_ambulance", readme: None, api: None, mappings: None),
    bundled!("urban_maintenance", readme: None, api: None, mappings: None),
];

pub fn bundled_ids() -> Vec<&'static str> {
    BUNDLED.iter().map(|b| b.id).collect()
}

pub fn bundled(id: &str) -> Result<Dataset, ModelError> {
    let b = BUNDLED
        .iter()
        .find(|b| b.id == id)
        .ok_or_else(|| ModelError::Project(format!("unknown dataset {id:?}")))?;
    let mut truth = parse_ground_truth(b.truth.as_bytes())?;
    truth.dataset_id = b.id.to_string();
    Ok(Dataset {
        id: b.id.to_string(),
        truth,
        readme: b.readme.map(str::to_string),
        description: Some(b.description.trim().to_string()),
        endpoints: b.api.map(|a| parse_api_catalogue(a.as_bytes())).transpose()?,
        fixture_mappings: b.mappings.map(parse_mappings).transpose()?.unwrap_or_default(),
    })
}

fn parse_mappings(text: &str) -> Result<Vec<ApiMapping>, ModelError> {
    serde_json::from_str(text).map_err(|e| ModelError::Schema(format!("fixture mappings: {e}")))
}

fn read_optional(path: &Path) -> Result<Option<String>, ModelError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(ModelError::Project(format!("{}: {e}", path.display()))),
    }
}

/// Reads `<root>/<id>/`, falling back to the bundled copy when `root` is
/// `None`.
pub fn load(root: Option<&Path>, id: &str) -> Result<Dataset, ModelError> {
    let Some(root) = root else { return bundled(id) };
    let dir = root.join(id);
    if !dir.is_dir() {
        return Err(ModelError::Project(format!("dataset directory {} not found", dir.display())));
    }
    let truth_bytes = fs::read(dir.join("ground_truth.json"))
        .map_err(|e| ModelError::Project(format!("{}/ground_truth.json: {e}", dir.display())))?;
    let mut truth = parse_ground_truth(&truth_bytes)?;
    truth.dataset_id = id.to_string();
    let readme = read_optional(&dir.join("README.md"))?;
    let description = read_optional(&dir.join("description.txt"))?.map(|d| d.trim().to_string());
    if readme.is_none() && description.is_none() {
        return Err(ModelError::Project(format!("{} has neither README.md nor description.txt", dir.display())));
    }
    let endpoints = read_optional(&dir.join("api.json"))?
        .map(|a| parse_api_catalogue(a.as_bytes()))
        .transpose()?;
    let fixture_mappings = read_optional(&dir.join("fixture_mappings.json"))?
        .map(|m| parse_mappings(&m))
        .transpose()?
        .unwrap_or_default();
    Ok(Dataset {
        id: id.to_string(),
        truth,
        readme,
        description,
        endpoints,
        fixture_mappings,
    })
}

impl Dataset {
    /// The pipeline input. A README wins over a ready description so that
    /// the preprocessing phase runs whenever raw input exists.
    pub fn project(&self) -> ProjectDescription {
        match (&self.readme, &self.description) {
            (Some(r), _) => ProjectDescription::from_readme(&self.id, r),
            (None, Some(d)) => ProjectDescription::from_description(&self.id, d),
            (None, None) => ProjectDescription::from_description(&self.id, ""),
        }
    }
}
