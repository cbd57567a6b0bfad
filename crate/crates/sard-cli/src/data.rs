//! Domain CSV ingestion and the per-domain numerical workspace.
//!
//! Columns: `id, x, y, area, y_t0, y_t1, s[, alt]`. `s` may be left empty
//! on every row when there is no topography field.

use std::path::Path;

use anyhow::{bail, Context};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use sard_core::design::DesignInputs;
use sard_core::geometry::{build_domain, contiguity, ContiguityMethod, ContiguityStructure, NeighborIndex, SpatialDomain, Topology};
use sard_core::gfdm::{operators_for, OperatorSet};
use sard_core::kernels::{build_interaction, InteractionMatrix, KernelSpec};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    id: String,
    x: f64,
    y: f64,
    area: f64,
    y_t0: f64,
    y_t1: f64,
    s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alt: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DomainData {
    pub domain: SpatialDomain,
    pub y0: DVector<f64>,
    pub y1: DVector<f64>,
    pub s: Option<DVector<f64>>,
    /// Alternative outcome used by the ALT-INCOME-LAG baseline.
    pub alt: Option<DVector<f64>>,
}

fn all_or_none(v: Vec<Option<f64>>, what: &str) -> anyhow::Result<Option<DVector<f64>>> {
    match v.iter().filter(|x| x.is_some()).count() {
        0 => Ok(None),
        k if k == v.len() => Ok(Some(DVector::from_iterator(v.len(), v.into_iter().flatten()))),
        k => bail!("column {what} is filled on {k} of {} rows", v.len()),
    }
}

impl DomainData {
    pub fn read_csv<R: std::io::Read>(reader: R, topology: Topology) -> anyhow::Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows: Vec<Row> = rdr.deserialize().collect::<Result<_, _>>().context("reading domain CSV")?;
        if rows.is_empty() {
            bail!("domain CSV has no rows");
        }
        let n = rows.len();
        let points = rows.iter().map(|r| [r.x, r.y]).collect();
        let areas = rows.iter().map(|r| r.area).collect();
        let domain = build_domain(points, areas, topology)?.with_ids(rows.iter().map(|r| r.id.clone()).collect())?;
        let y0 = DVector::from_iterator(n, rows.iter().map(|r| r.y_t0));
        let y1 = DVector::from_iterator(n, rows.iter().map(|r| r.y_t1));
        let s = all_or_none(rows.iter().map(|r| r.s).collect(), "s")?;
        let alt = all_or_none(rows.iter().map(|r| r.alt).collect(), "alt")?;
        Ok(Self { domain, y0, y1, s, alt })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Self::read_csv(f, Topology::Planar)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> anyhow::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for i in 0..self.domain.len() {
            let p = self.domain.point(i);
            wtr.serialize(Row {
                id: self.domain.ids()[i].clone(),
                x: p[0],
                y: p[1],
                area: self.domain.areas()[i],
                y_t0: self.y0[i],
                y_t1: self.y1[i],
                s: self.s.as_ref().map(|s| s[i]),
                alt: self.alt.as_ref().map(|a| a[i]),
            })?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Everything the estimators need that depends only on geometry and
/// bandwidths.
pub struct Workspace {
    pub domain: SpatialDomain,
    pub ops: OperatorSet,
    pub w_a: Option<InteractionMatrix>,
    pub w_r: Option<InteractionMatrix>,
    pub s: Option<DVector<f64>>,
}

impl Workspace {
    /// A bandwidth of `None` drops that interaction term.
    pub fn new(domain: SpatialDomain, s: Option<DVector<f64>>, cfg: &ExperimentConfig, h_a: Option<f64>, h_r: Option<f64>) -> anyhow::Result<Self> {
        let ops = operators_for(&domain, cfg.gfdm())?;
        let kern = |h: Option<f64>| -> anyhow::Result<Option<InteractionMatrix>> {
            Ok(match h {
                Some(h) => Some(build_interaction(&domain, KernelSpec::new(h)?)),
                None => None,
            })
        };
        let w_a = kern(h_a)?;
        let w_r = kern(h_r)?;
        Ok(Self { domain, ops, w_a, w_r, s })
    }

    pub fn with_bandwidths(&self, h_a: f64, h_r: f64) -> anyhow::Result<Self> {
        Ok(Self {
            domain: self.domain.clone(),
            ops: self.ops.clone(),
            w_a: Some(build_interaction(&self.domain, KernelSpec::new(h_a)?)),
            w_r: Some(build_interaction(&self.domain, KernelSpec::new(h_r)?)),
            s: self.s.clone(),
        })
    }

    pub fn inputs(&self) -> DesignInputs<'_> {
        DesignInputs {
            domain: &self.domain,
            ops: &self.ops,
            w_a: self.w_a.as_ref(),
            w_r: self.w_r.as_ref(),
            s: self.s.as_ref(),
        }
    }
}

/// Rook adjacency on lattices, a distance threshold otherwise.
pub fn contiguity_for(domain: &SpatialDomain, cfg: &ExperimentConfig) -> anyhow::Result<ContiguityStructure> {
    let method = if domain.grid().is_some() {
        ContiguityMethod::RookOnGrid
    } else {
        ContiguityMethod::DistanceThreshold(match cfg.contiguity_distance {
            Some(d) => d,
            None => 1.5 * mean_nearest_distance(domain),
        })
    };
    Ok(contiguity(domain, method, cfg.max_order)?)
}

pub fn mean_nearest_distance(domain: &SpatialDomain) -> f64 {
    let index = NeighborIndex::new(domain);
    let n = domain.len();
    (0..n).map(|i| index.k_nearest(i, 1).first().map_or(0.0, |p| p.1)).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "id,x,y,area,y_t0,y_t1,s\na,0,0,1,2,2.1,\nb,1,0,1,3,3.2,\nc,0,1,2,4,4.1,\n";

    #[test]
    fn reads_and_roundtrips() {
        let d = DomainData::read_csv(SAMPLE.as_bytes(), Topology::Planar).unwrap();
        assert_eq!(d.domain.len(), 3);
        assert!(d.s.is_none() && d.alt.is_none());
        assert_eq!(d.domain.areas()[2], 2.0);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let again = DomainData::read_csv(buf.as_slice(), Topology::Planar).unwrap();
        assert_eq!(again.y1, d.y1);
        assert_eq!(again.domain.ids(), d.domain.ids());
    }

    #[test]
    fn partial_columns_are_rejected() {
        let bad = "id,x,y,area,y_t0,y_t1,s\na,0,0,1,2,2.1,1\nb,1,0,1,3,3.2,\n";
        assert!(DomainData::read_csv(bad.as_bytes(), Topology::Planar).is_err());
        assert!(DomainData::read_csv("id,x,y,area,y_t0,y_t1,s\n".as_bytes(), Topology::Planar).is_err());
    }
}
