//! Observation CSV files, JSON sidecars and model documents.
//!
//! CSV columns are `lon_deg, lat_deg, var, value` on S² and
//! `angle_rad, var, value` on S¹, with 1-based variable labels.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asym::{AsymmetricCovariance, AsymmetrySpec};
use crate::error::{Error, Result};
use crate::geom::{SphereDim, SpherePoint};
use crate::models::{Preset, RadialModelSpec};
use crate::simulate::{ObservationSet, SimulationMeta};

/// Writes `bytes` to `path` through a temporary file and a rename, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

/// Serializes observations as CSV text.
pub fn observations_to_csv(data: &ObservationSet) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match data.dim() {
        SphereDim::Sphere => w.write_record(["lon_deg", "lat_deg", "var", "value"])?,
        SphereDim::Circle => w.write_record(["angle_rad", "var", "value"])?,
    }
    for k in 0..data.len() {
        let var = (data.vars[k] + 1).to_string();
        let value = data.values[k].to_string();
        match data.dim() {
            SphereDim::Sphere => {
                let (lon, lat) = data.sites[k].to_lon_lat_deg()?;
                w.write_record([lon.to_string(), lat.to_string(), var, value])?;
            }
            SphereDim::Circle => {
                let angle = data.sites[k].angle()?;
                w.write_record([angle.to_string(), var, value])?;
            }
        }
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn write_observations_csv(path: &Path, data: &ObservationSet) -> Result<()> {
    write_atomic(path, &observations_to_csv(data)?)
}

fn parse_number(field: &str, column: &str, row: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Ingestion {
        row,
        message: format!("column {column}: {field:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Ingestion {
            row,
            message: format!("column {column}: non-finite value {field:?}"),
        });
    }
    Ok(v)
}

/// Parses observation CSV. Rows are numbered from 1 for the first data row;
/// header problems are reported at row 0.
pub fn read_observations<R: Read>(reader: R) -> Result<ObservationSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let dim = if col("angle_rad").is_some() && col("lon_deg").is_none() {
        SphereDim::Circle
    } else {
        SphereDim::Sphere
    };
    let needed: &[&str] = match dim {
        SphereDim::Sphere => &["lon_deg", "lat_deg", "var", "value"],
        SphereDim::Circle => &["angle_rad", "var", "value"],
    };
    let mut idx = Vec::with_capacity(needed.len());
    for name in needed {
        idx.push(col(name).ok_or_else(|| Error::Ingestion {
            row: 0,
            message: format!("missing column {name}"),
        })?);
    }

    let (mut sites, mut vars, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Ingestion {
            row,
            message: e.to_string(),
        })?;
        let get = |i: usize| -> Result<&str> {
            record.get(idx[i]).ok_or_else(|| Error::Ingestion {
                row,
                message: format!("missing field {}", needed[i]),
            })
        };
        let site = match dim {
            SphereDim::Sphere => {
                let lon = parse_number(get(0)?, "lon_deg", row)?;
                let lat = parse_number(get(1)?, "lat_deg", row)?;
                SpherePoint::from_lon_lat_deg(lon, lat).map_err(|e| Error::Ingestion {
                    row,
                    message: e.to_string(),
                })?
            }
            SphereDim::Circle => SpherePoint::from_angle(parse_number(get(0)?, "angle_rad", row)?),
        };
        let vi = needed.len() - 2;
        let var_field = get(vi)?;
        let var: usize = match var_field.trim().parse() {
            Ok(v) if v >= 1 => v,
            _ => {
                return Err(Error::Ingestion {
                    row,
                    message: format!("column var: {var_field:?} is not a positive integer"),
                })
            }
        };
        let value = parse_number(get(vi + 1)?, "value", row)?;
        sites.push(site);
        vars.push(var - 1);
        values.push(value);
    }
    ObservationSet::new(sites, vars, values)
}

pub fn read_observations_csv(path: &Path) -> Result<ObservationSet> {
    read_observations(fs::File::open(path)?)
}

/// Reads residual data for model comparison: at least `min` observations.
pub fn ingest_residuals(path: &Path, min: usize) -> Result<ObservationSet> {
    let data = read_observations_csv(path)?;
    if data.len() < min {
        return Err(Error::Ingestion {
            row: data.len(),
            message: format!("only {} observations, need at least {min}", data.len()),
        });
    }
    Ok(data)
}

/// A covariance model as written in JSON: either a preset with its handful of
/// parameters or a full radial specification, plus optional rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default = "default_dim")]
    pub dim: SphereDim,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<RadialModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asymmetry: Option<AsymmetrySpec>,
}

fn default_dim() -> SphereDim {
    SphereDim::Sphere
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetParams {
    pub model: Preset,
    pub sigma2: [f64; 2],
    pub rho12: f64,
    pub c11: f64,
    /// Ignored when `separable`.
    #[serde(default)]
    pub c22: Option<f64>,
    #[serde(default)]
    pub separable: bool,
}

impl ModelDocument {
    pub fn from_preset(params: PresetParams, asymmetry: Option<AsymmetrySpec>) -> Self {
        ModelDocument {
            dim: SphereDim::Sphere,
            preset: Some(params),
            spec: None,
            asymmetry,
        }
    }

    pub fn radial_spec(&self) -> Result<RadialModelSpec> {
        match (&self.preset, &self.spec) {
            (Some(p), None) => {
                let c22 = match (p.separable, p.c22) {
                    (true, _) => p.c11,
                    (false, Some(c)) => c,
                    (false, None) => {
                        return Err(Error::invalid("non-separable preset model needs c22"))
                    }
                };
                Ok(p.model
                    .bivariate(p.sigma2, p.rho12, p.c11, c22, p.separable))
            }
            (None, Some(s)) => Ok(s.clone()),
            _ => Err(Error::invalid(
                "model document needs exactly one of \"preset\" and \"spec\"",
            )),
        }
    }

    /// The model without validity checks.
    pub fn build(&self) -> Result<AsymmetricCovariance> {
        if let Some(a) = &self.asymmetry {
            a.check_range(self.dim)?;
        }
        AsymmetricCovariance::new(self.radial_spec()?, self.asymmetry.clone(), self.dim)
    }

    /// The model, rejecting parameters that violate the validity conditions.
    pub fn build_valid(&self) -> Result<AsymmetricCovariance> {
        let model = self.build()?;
        model.base().ensure_valid()?;
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Provenance written next to a simulated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub model: ModelDocument,
    pub n_observations: usize,
    #[serde(flatten)]
    pub meta: SimulationMeta,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::paper_grid;
    use crate::simulate::FieldSimulator;

    fn doc() -> ModelDocument {
        ModelDocument::from_preset(
            PresetParams {
                model: Preset::M1,
                sigma2: [1.0, 1.0],
                rho12: 0.5,
                c11: 0.1,
                c22: Some(0.2),
                separable: false,
            },
            Some(AsymmetrySpec::new(0.6, 1.0, 1.0)),
        )
    }

    #[test]
    fn csv_round_trip_keeps_values_bitwise() {
        let model = doc().build_valid().unwrap();
        let data = FieldSimulator::new(&model, &paper_grid(6, true).unwrap(), 0.0)
            .unwrap()
            .draw(5, 0);
        let text = observations_to_csv(&data).unwrap();
        let back = read_observations(text.as_slice()).unwrap();
        assert_eq!(back.len(), data.len());
        for k in 0..data.len() {
            assert_eq!(back.values[k].to_bits(), data.values[k].to_bits());
            assert_eq!(back.vars[k], data.vars[k]);
            for (a, b) in back.sites[k].coords().iter().zip(data.sites[k].coords()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn circle_round_trip() {
        let sites: Vec<SpherePoint> = [0.1, 2.0, -1.0]
            .iter()
            .map(|&a| SpherePoint::from_angle(a))
            .collect();
        let data = ObservationSet::new(sites, vec![0, 1, 0], vec![0.5, -0.25, 1e-300]).unwrap();
        let back = read_observations(observations_to_csv(&data).unwrap().as_slice()).unwrap();
        assert_eq!(back.dim(), SphereDim::Circle);
        assert_eq!(back.values, data.values);
    }

    #[test]
    fn ingestion_errors_name_the_row() {
        let nan = "lon_deg,lat_deg,var,value\n0,0,1,0.5\n10,20,2,NaN\n";
        match read_observations(nan.as_bytes()) {
            Err(Error::Ingestion { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        let text = "lon_deg,lat_deg,var,value\n0,0,1,abc\n";
        assert!(matches!(
            read_observations(text.as_bytes()),
            Err(Error::Ingestion { row: 1, .. })
        ));
        let missing = "lon_deg,var,value\n0,1,0.5\n";
        match read_observations(missing.as_bytes()) {
            Err(Error::Ingestion { row: 0, message }) => assert!(message.contains("lat_deg")),
            other => panic!("{other:?}"),
        }
        let bad_var = "lon_deg,lat_deg,var,value\n0,0,0,1.0\n";
        assert!(matches!(
            read_observations(bad_var.as_bytes()),
            Err(Error::Ingestion { row: 1, .. })
        ));
        let bad_lat = "lon_deg,lat_deg,var,value\n0,95,1,1.0\n";
        assert!(matches!(
            read_observations(bad_lat.as_bytes()),
            Err(Error::Ingestion { row: 1, .. })
        ));
    }

    #[test]
    fn too_few_observations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("few.csv");
        fs::write(&path, "lon_deg,lat_deg,var,value\n0,0,1,0.5\n").unwrap();
        assert!(matches!(
            ingest_residuals(&path, 10),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn model_document_json() {
        let text = serde_json::to_string(&doc()).unwrap();
        let back = ModelDocument::from_json(&text).unwrap();
        assert_eq!(back, doc());
        assert!(ModelDocument::from_json(r#"{"preset": {"model": "M1", "sigma2": [1,1], "rho12": 0.5, "c11": 0.1, "c22": 0.2}, "bogus": 1}"#).is_err());
        let neither = ModelDocument::from_json("{}").unwrap();
        assert!(neither.build().is_err());
        let invalid = ModelDocument::from_json(
            r#"{"preset": {"model": "M1", "sigma2": [1,1], "rho12": 0.99, "c11": 0.05, "c22": 0.5}}"#,
        )
        .unwrap();
        assert!(invalid.build().is_ok());
        assert!(matches!(invalid.build_valid(), Err(Error::Validation(_))));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
