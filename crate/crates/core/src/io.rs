//! CSV and JSON artifacts.
//!
//! Every CSV starts with a `# divbar <version> config <hash>` comment line,
//! followed by one header line and the rows. Floats are written with 17
//! significant digits so that they read back exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary::{BoundarySolution, Termination};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::path::DiscretePath;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const BOUNDARY_COLUMNS: [&str; 7] = ["m", "b", "F", "A1", "A2", "A3", "A4"];
pub const SWEEP_COLUMNS: [&str; 8] = ["value", "m", "b", "F", "A1", "A2", "A3", "A4"];
pub const U_COLUMNS: [&str; 3] = ["x", "m", "U"];
pub const PATH_COLUMNS: [&str; 4] = ["t", "X", "M", "D"];
pub const POINT_COLUMNS: [&str; 2] = ["x", "m"];

/// Identifies the producing build and configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Provenance {
            version: VERSION.to_string(),
            config_hash: config_hash.into(),
        }
    }

    fn comment(&self) -> String {
        format!("# divbar {} config {}\n", self.version, self.config_hash)
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn params_hash(params: &ModelParams) -> String {
    sha256_hex(serde_json::to_string(params).expect("params serialize").as_bytes())
}

fn write_rows<W: Write>(w: &mut W, prov: &Provenance, columns: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    w.write_all(prov.comment().as_bytes())?;
    writeln!(w, "{}", columns.join(","))?;
    for row in rows {
        let line: Vec<String> = row.into_iter().map(fmt_f64).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

fn boundary_rows(sol: &BoundarySolution) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..sol.len()).map(move |i| {
        vec![sol.m_grid[i], sol.b[i], sol.aux[i], sol.a1[i], sol.a2[i], sol.a3[i], sol.a4[i]]
    })
}

/// Marker appended to a partial boundary written after a singular system.
pub fn truncation_marker(m: f64, det: f64) -> String {
    format!("# truncated: singular system at m={} det={}\n", fmt_f64(m), fmt_f64(det))
}

pub fn write_boundary_csv<W: Write>(w: &mut W, sol: &BoundarySolution, prov: &Provenance) -> Result<()> {
    write_rows(w, prov, &BOUNDARY_COLUMNS, boundary_rows(sol))
}

pub fn write_sweep_csv<W: Write>(w: &mut W, prov: &Provenance, runs: &[(f64, &BoundarySolution)]) -> Result<()> {
    let rows = runs.iter().flat_map(|(v, sol)| {
        boundary_rows(sol).map(move |mut r| {
            r.insert(0, *v);
            r
        })
    });
    write_rows(w, prov, &SWEEP_COLUMNS, rows)
}

pub fn write_u_csv<W: Write>(w: &mut W, prov: &Provenance, cells: &[(f64, f64, f64)]) -> Result<()> {
    write_rows(w, prov, &U_COLUMNS, cells.iter().map(|&(x, m, u)| vec![x, m, u]))
}

pub fn write_path_csv<W: Write>(w: &mut W, prov: &Provenance, path: &DiscretePath) -> Result<()> {
    let rows = (0..path.len()).map(|i| vec![path.t[i], path.x[i], path.m[i], path.d[i]]);
    write_rows(w, prov, &PATH_COLUMNS, rows)
}

/// Scalar summary written next to the boundary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryHeader {
    pub b0: f64,
    #[serde(rename = "F0")]
    pub f0: f64,
    pub m_star: f64,
    pub m_end: f64,
    pub det_min: f64,
    pub termination: Termination,
    pub step: f64,
    pub halved_steps: usize,
    pub nodes: usize,
    pub params: ModelParams,
    pub params_hash: String,
    pub truncated: bool,
    #[serde(flatten)]
    pub provenance: Provenance,
}

impl BoundaryHeader {
    pub fn new(sol: &BoundarySolution, params: &ModelParams, prov: &Provenance) -> Self {
        BoundaryHeader {
            b0: sol.b0,
            f0: sol.f0,
            m_star: sol.m_star,
            m_end: sol.m_end,
            det_min: sol.det_min,
            termination: sol.termination,
            step: sol.step,
            halved_steps: sol.halved_steps,
            nodes: sol.len(),
            params: *params,
            params_hash: params_hash(params),
            truncated: sol.termination == Termination::Singular,
            provenance: prov.clone(),
        }
    }
}

/// One row of a payoff comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffRecord {
    pub line: usize,
    pub x: f64,
    pub m: f64,
    pub estimate: Option<f64>,
    pub std_err: Option<f64>,
    pub reference: Option<f64>,
    /// `None` when undefined; see `exact_match`.
    pub z: Option<f64>,
    pub exact_match: bool,
    pub error: Option<String>,
}

fn reader<R: Read>(r: R, flexible: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(flexible)
        .from_reader(r)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers().map_err(csv_error)?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Parse {
            line: headers.position().map(|p| p.line() as usize),
            message: format!("expected columns {}, found {}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn parse_record(rec: &csv::StringRecord, columns: &[&str]) -> Result<Vec<f64>> {
    let line = rec.position().map(|p| p.line() as usize);
    rec.iter()
        .zip(columns)
        .map(|(field, col)| {
            field.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column {col}: not a number: {field:?}"),
            })
        })
        .collect()
}

fn read_table<R: Read>(r: R, columns: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(r, false);
    check_header(&mut rdr, columns)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        out.push(parse_record(&rec, columns)?);
    }
    Ok(out)
}

/// Boundary table as columns in `BOUNDARY_COLUMNS` order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryTable {
    pub m: Vec<f64>,
    pub b: Vec<f64>,
    pub aux: Vec<f64>,
    pub a: [Vec<f64>; 4],
}

pub fn read_boundary_csv<R: Read>(r: R) -> Result<BoundaryTable> {
    let mut t = BoundaryTable::default();
    for row in read_table(r, &BOUNDARY_COLUMNS)? {
        t.m.push(row[0]);
        t.b.push(row[1]);
        t.aux.push(row[2]);
        for k in 0..4 {
            t.a[k].push(row[3 + k]);
        }
    }
    Ok(t)
}

pub fn read_sweep_csv<R: Read>(r: R) -> Result<Vec<Vec<f64>>> {
    read_table(r, &SWEEP_COLUMNS)
}

pub fn read_u_csv<R: Read>(r: R) -> Result<Vec<(f64, f64, f64)>> {
    Ok(read_table(r, &U_COLUMNS)?.into_iter().map(|v| (v[0], v[1], v[2])).collect())
}

/// Path columns `(t, X, M, D)`; not checked against any model.
pub fn read_path_csv<R: Read>(r: R) -> Result<[Vec<f64>; 4]> {
    let mut cols: [Vec<f64>; 4] = Default::default();
    for row in read_table(r, &PATH_COLUMNS)? {
        for k in 0..4 {
            cols[k].push(row[k]);
        }
    }
    Ok(cols)
}

/// One evaluation point, or why its row was rejected.
#[derive(Debug)]
pub struct PointRow {
    pub line: usize,
    pub point: Result<(f64, f64)>,
}

/// Evaluation points. A bad header fails the whole file; bad rows are
/// returned individually so that the rest can still be processed.
pub fn read_points_csv<R: Read>(r: R) -> Result<Vec<PointRow>> {
    let mut rdr = reader(r, true);
    check_header(&mut rdr, &POINT_COLUMNS)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let (line, point) = match rec {
            Err(e) => (
                e.position().map(|p| p.line() as usize).unwrap_or(i + 2),
                Err(csv_error(e)),
            ),
            Ok(rec) => {
                let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
                let point = if rec.len() != 2 {
                    Err(Error::Parse {
                        line: Some(line),
                        message: format!("expected 2 fields, found {}", rec.len()),
                    })
                } else {
                    parse_record(&rec, &POINT_COLUMNS).and_then(|v| {
                        if v.iter().all(|z| z.is_finite()) {
                            Ok((v[0], v[1]))
                        } else {
                            Err(Error::Parse {
                                line: Some(line),
                                message: "coordinates must be finite".into(),
                            })
                        }
                    })
                };
                (line, point)
            }
        };
        out.push(PointRow { line, point });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::integrate_boundary;
    use crate::model::{CostThreshold, LambdaQuad};
    use proptest::prelude::*;

    fn fig2() -> (BoundarySolution, ModelParams) {
        let l = LambdaQuad::new(-2.0, 1.0, -3.0, 2.0).unwrap();
        let p = ModelParams::from_lambda(&l, 1.0, 0.3, 5.0, CostThreshold::Finite(0.1)).unwrap();
        (integrate_boundary(&p, &l, 1e-3).unwrap(), p)
    }

    #[test]
    fn boundary_round_trip_is_exact() {
        let (sol, p) = fig2();
        let prov = Provenance::new("abc");
        let mut buf = Vec::new();
        write_boundary_csv(&mut buf, &sol, &prov).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("# divbar {VERSION} config abc\nm,b,F,A1,A2,A3,A4\n")));
        let t = read_boundary_csv(&buf[..]).unwrap();
        assert_eq!(t.m, sol.m_grid);
        assert_eq!(t.b, sol.b);
        assert_eq!(t.aux, sol.aux);
        assert_eq!(t.a[2], sol.a3);
        let h = BoundaryHeader::new(&sol, &p, &prov);
        let json = serde_json::to_value(&h).unwrap();
        assert_eq!(json["config_hash"], "abc");
        assert_eq!(json["F0"].as_f64(), Some(sol.f0));
    }

    #[test]
    fn wrong_header_rejected() {
        let err = read_boundary_csv("m,b,F\n1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn points_report_bad_rows_individually() {
        let src = "# c\nx,m\n0.5,0.1\nfoo,0.2\n0.3\n0.2,0.4\n";
        let rows = read_points_csv(src.as_bytes()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].point.as_ref().unwrap(), &(0.5, 0.1));
        assert!(rows[1].point.is_err());
        assert_eq!(rows[1].line, 4);
        assert!(rows[2].point.is_err());
        assert_eq!(rows[3].point.as_ref().unwrap(), &(0.2, 0.4));
    }

    #[test]
    fn path_round_trip() {
        let (sol, p) = fig2();
        let path = crate::reflect::simulate_equilibrium(&sol, &p, 0.15, 0.1, 0.2, 1e-3, 3).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&mut buf, &Provenance::new("h"), &path).unwrap();
        let [t, x, m, d] = read_path_csv(&buf[..]).unwrap();
        assert_eq!(t, path.t);
        assert_eq!(x, path.x);
        assert_eq!(m, path.m);
        assert_eq!(d, path.d);
    }

    proptest! {
        #[test]
        fn readers_never_panic(data in proptest::collection::vec(any::<u8>(), 0..300), header in 0usize..4) {
            let headers = ["x,m\n", "t,X,M,D\n", "m,b,F,A1,A2,A3,A4\n", ""];
            let mut input = headers[header].as_bytes().to_vec();
            input.extend(&data);
            let _ = read_points_csv(&input[..]);
            let _ = read_path_csv(&input[..]);
            let _ = read_boundary_csv(&input[..]);
            let _ = read_u_csv(&input[..]);
            let _ = read_sweep_csv(&input[..]);
        }

        #[test]
        fn float_format_round_trips(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
