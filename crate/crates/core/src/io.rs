//! File formats: envelope JSON, p-value and selection CSV inputs, curve CSV
//! outputs. Every file is written atomically (temporary file, then rename).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::diagnostics::{CcvThresholds, VarianceQuery, VarianceResult};
use crate::envelope::{build_envelope, Direction, EnvelopeFamily, EnvelopeFunction, Scale};
use crate::error::{config, Error, Result};
use crate::fdp::{FdpBoundCurve, PValueVector};
use crate::selection::{CalibrationPoint, TestPoint};
use crate::statistics::{StatisticKind, SummaryStatisticSpec};

/// A cutoff that serializes as a JSON number, or as `"inf"` when infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff(pub f64);

impl Serialize for Cutoff {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Cutoff {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Cutoff(v)),
            Raw::Text(s) if matches!(s.as_str(), "inf" | "+inf" | "Infinity") => Ok(Cutoff(f64::INFINITY)),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("invalid cutoff {s:?}"))),
        }
    }
}

/// On-disk form of an envelope, or of a family when `family_cutoffs` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeDocument {
    pub template: StatisticKind,
    pub beta: f64,
    pub ell: f64,
    pub r: f64,
    pub cutoff: Cutoff,
    #[serde(default)]
    pub scale: Scale,
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    #[serde(rename = "B", default)]
    pub b: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default)]
    pub bj_one_sided: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_cutoffs: Option<Vec<Cutoff>>,
}

impl EnvelopeDocument {
    pub fn from_envelope(g: &EnvelopeFunction) -> Self {
        let spec = g.spec();
        Self {
            template: spec.kind,
            beta: spec.beta,
            ell: spec.ell,
            r: spec.r,
            cutoff: Cutoff(g.cutoff()),
            scale: g.scale(),
            n: g.n(),
            m: g.m(),
            delta: g.delta(),
            b: g.b_used(),
            seed: g.seed(),
            direction: g.direction(),
            t0: (spec.kind == StatisticKind::Pointwise).then_some(spec.t0),
            bj_one_sided: spec.bj_one_sided,
            family_cutoffs: None,
        }
    }

    pub fn from_family(family: &EnvelopeFamily) -> Self {
        let mut doc = Self::from_envelope(&family.full());
        doc.family_cutoffs = Some(family.cutoffs().iter().map(|&c| Cutoff(c)).collect());
        doc
    }

    pub fn spec(&self) -> SummaryStatisticSpec {
        SummaryStatisticSpec {
            kind: self.template,
            ell: self.ell,
            r: self.r,
            beta: self.beta,
            t0: self.t0.unwrap_or(0.0),
            bj_one_sided: self.bj_one_sided,
        }
    }

    pub fn to_envelope(&self) -> Result<EnvelopeFunction> {
        let g = build_envelope(self.cutoff.0, &self.spec(), self.n, self.m, self.delta, self.direction)?
            .with_provenance(self.b, self.seed);
        Ok(match self.scale {
            Scale::Proportion => g,
            Scale::Count => g.to_count_scale(),
        })
    }

    pub fn to_family(&self) -> Result<EnvelopeFamily> {
        let Some(cutoffs) = &self.family_cutoffs else {
            return config("envelope file has no family_cutoffs; recalibrate with --family");
        };
        if cutoffs.len() != self.m {
            return config(format!(
                "family_cutoffs has {} entries but m = {}",
                cutoffs.len(),
                self.m
            ));
        }
        EnvelopeFamily::from_cutoffs(
            cutoffs.iter().map(|c| c.0).collect(),
            &self.spec(),
            self.n,
            self.delta,
            self.b,
            self.seed,
        )
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn envelope_to_json(doc: &EnvelopeDocument) -> Result<String> {
    Ok(serde_json::to_string_pretty(doc)?)
}

pub fn envelope_from_json(text: &str) -> Result<EnvelopeDocument> {
    Ok(serde_json::from_str(text)?)
}

pub fn write_envelope(path: &Path, doc: &EnvelopeDocument) -> Result<()> {
    let mut text = envelope_to_json(doc)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_envelope(path: &Path) -> Result<EnvelopeDocument> {
    envelope_from_json(&fs::read_to_string(path)?)
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Column positions of `required` and `optional` headers.
fn columns<R: Read>(rdr: &mut csv::Reader<R>, required: &[&str], optional: &[&str]) -> Result<Vec<Option<usize>>> {
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let mut out = Vec::new();
    for name in required {
        match find(name) {
            Some(i) => out.push(Some(i)),
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("missing required column `{name}`"),
                })
            }
        }
    }
    out.extend(optional.iter().map(|name| find(name)));
    Ok(out)
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<&'a str> {
    rec.get(idx).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing value for `{name}`"),
    })
}

fn parse_f64(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64> {
    let s = field(rec, idx, name, line)?;
    s.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("`{name}` is not a number: {s:?}"),
    })
}

fn parse_bool(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<bool> {
    match field(rec, idx, name, line)?.to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::Parse {
            line,
            message: format!("`{name}` must be 0 or 1, got {other:?}"),
        }),
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// P-values from CSV with a `p` column and an optional 0/1 `is_null` column.
pub fn read_pvalues_csv<R: Read>(source: R) -> Result<PValueVector> {
    let mut rdr = reader(source);
    let cols = columns(&mut rdr, &["p"], &["is_null"])?;
    let (p_col, null_col) = (cols[0].unwrap(), cols[1]);
    let mut p = Vec::new();
    let mut mask = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = line_of(&rec);
        let v = parse_f64(&rec, p_col, "p", line)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Parse {
                line,
                message: format!("p-value {v} outside [0, 1]"),
            });
        }
        p.push(v);
        if let Some(c) = null_col {
            mask.push(parse_bool(&rec, c, "is_null", line)?);
        }
    }
    let pv = PValueVector::new(p)?;
    if null_col.is_some() {
        pv.with_null_mask(mask)
    } else {
        Ok(pv)
    }
}

/// Calibration data with columns `muhat, y, c`.
pub fn read_selection_calib_csv<R: Read>(source: R) -> Result<Vec<CalibrationPoint>> {
    let mut rdr = reader(source);
    let cols = columns(&mut rdr, &["muhat", "y", "c"], &[])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = line_of(&rec);
        out.push(CalibrationPoint {
            muhat: parse_f64(&rec, cols[0].unwrap(), "muhat", line)?,
            y: parse_f64(&rec, cols[1].unwrap(), "y", line)?,
            c: parse_f64(&rec, cols[2].unwrap(), "c", line)?,
        });
    }
    Ok(out)
}

/// Test data with columns `muhat, c` and optional `y_true`.
pub fn read_selection_test_csv<R: Read>(source: R) -> Result<(Vec<TestPoint>, Option<Vec<f64>>)> {
    let mut rdr = reader(source);
    let cols = columns(&mut rdr, &["muhat", "c"], &["y_true"])?;
    let mut test = Vec::new();
    let mut truth = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = line_of(&rec);
        test.push(TestPoint {
            muhat: parse_f64(&rec, cols[0].unwrap(), "muhat", line)?,
            c: parse_f64(&rec, cols[1].unwrap(), "c", line)?,
        });
        if let Some(c) = cols[2] {
            truth.push(parse_f64(&rec, c, "y_true", line)?);
        }
    }
    Ok((test, cols[2].map(|_| truth)))
}

fn to_csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Curve CSV: `t, n_reject, bound_naive, bound_refined, bound_combined`, plus
/// `fdp_true` when ground truth is known. Floats use shortest round-trip form.
pub fn curve_to_csv(curve: &FdpBoundCurve) -> Result<Vec<u8>> {
    let mut header = vec!["t", "n_reject", "bound_naive", "bound_refined", "bound_combined"];
    if curve.fdp_true.is_some() {
        header.push("fdp_true");
    }
    let rows = (0..curve.len()).map(|i| {
        let mut row = vec![
            curve.eval_points[i].to_string(),
            curve.rejections[i].to_string(),
            curve.bound_naive[i].to_string(),
            curve.bound_refined[i].to_string(),
            curve.bound_combined[i].to_string(),
        ];
        if let Some(truth) = &curve.fdp_true {
            row.push(truth[i].to_string());
        }
        row
    });
    to_csv_bytes(&header, rows)
}

/// Parse a curve CSV. The file carries no `delta` or `m0_hat`; they are
/// supplied by the caller.
pub fn curve_from_csv<R: Read>(source: R, delta: f64, mhat0: Option<usize>) -> Result<FdpBoundCurve> {
    let mut rdr = reader(source);
    let cols = columns(
        &mut rdr,
        &["t", "n_reject", "bound_naive", "bound_refined", "bound_combined"],
        &["fdp_true"],
    )?;
    let mut curve = FdpBoundCurve {
        eval_points: Vec::new(),
        rejections: Vec::new(),
        bound_naive: Vec::new(),
        bound_refined: Vec::new(),
        bound_combined: Vec::new(),
        mhat0,
        delta,
        fdp_true: cols[5].map(|_| Vec::new()),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = line_of(&rec);
        curve.eval_points.push(parse_f64(&rec, cols[0].unwrap(), "t", line)?);
        let r = field(&rec, cols[1].unwrap(), "n_reject", line)?;
        curve.rejections.push(r.parse().map_err(|_| Error::Parse {
            line,
            message: format!("`n_reject` is not a count: {r:?}"),
        })?);
        curve
            .bound_naive
            .push(parse_f64(&rec, cols[2].unwrap(), "bound_naive", line)?);
        curve
            .bound_refined
            .push(parse_f64(&rec, cols[3].unwrap(), "bound_refined", line)?);
        curve
            .bound_combined
            .push(parse_f64(&rec, cols[4].unwrap(), "bound_combined", line)?);
        if let (Some(c), Some(truth)) = (cols[5], curve.fdp_true.as_mut()) {
            truth.push(parse_f64(&rec, c, "fdp_true", line)?);
        }
    }
    Ok(curve)
}

/// CCV thresholds as `i, b_i` for `i = 0..=n+1`.
pub fn ccv_to_csv(thresholds: &CcvThresholds) -> Result<Vec<u8>> {
    let rows = thresholds
        .values()
        .iter()
        .enumerate()
        .map(|(i, b)| vec![i.to_string(), b.to_string()]);
    to_csv_bytes(&["i", "b_i"], rows)
}

/// Variance table `t, var, c, rho`.
pub fn variance_to_csv(rows: &[(VarianceQuery, VarianceResult)]) -> Result<Vec<u8>> {
    let rows = rows
        .iter()
        .map(|(q, r)| vec![q.t.to_string(), r.var.to_string(), r.c.to_string(), r.rho.to_string()]);
    to_csv_bytes(&["t", "var", "c", "rho"], rows)
}

/// Simple two-column p-value CSV (`p`, optional `is_null`).
pub fn pvalues_to_csv(p: &PValueVector) -> Result<Vec<u8>> {
    let mask = p.null_mask();
    let header: &[&str] = if mask.is_some() { &["p", "is_null"] } else { &["p"] };
    let rows = p.values().iter().enumerate().map(|(i, v)| {
        let mut row = vec![v.to_string()];
        if let Some(mask) = mask {
            row.push(if mask[i] { "1" } else { "0" }.to_string());
        }
        row
    });
    to_csv_bytes(header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::calibrate_family;
    use crate::sampler::{sample_conformal, SamplerConfig};

    #[test]
    fn envelope_json_round_trip_is_bit_exact() {
        let spec = SummaryStatisticSpec::thc_default();
        let g = build_envelope(0.123456789012345, &spec, 100, 80, 0.1, Direction::Upper)
            .unwrap()
            .with_provenance(1000, 42);
        let doc = EnvelopeDocument::from_envelope(&g);
        let text = envelope_to_json(&doc).unwrap();
        for key in ["\"template\": \"thc\"", "\"B\": 1000", "\"direction\": \"upper\""] {
            assert!(text.contains(key), "{text}");
        }
        let back = envelope_from_json(&text).unwrap().to_envelope().unwrap();
        assert_eq!(back, g);
        for i in 0..1000 {
            let t = i as f64 / 999.0;
            assert_eq!(back.eval(t).to_bits(), g.eval(t).to_bits());
        }
    }

    #[test]
    fn infinite_cutoff_is_written_as_text() {
        let g = build_envelope(f64::INFINITY, &SummaryStatisticSpec::ks(), 5, 5, 0.1, Direction::Upper).unwrap();
        let text = envelope_to_json(&EnvelopeDocument::from_envelope(&g)).unwrap();
        assert!(text.contains("\"cutoff\": \"inf\""));
        assert_eq!(envelope_from_json(&text).unwrap().to_envelope().unwrap(), g);
    }

    #[test]
    fn family_round_trip() {
        let s = sample_conformal(&SamplerConfig::conformal(20, 6, 200, 3)).unwrap();
        let fam = calibrate_family(&s, &SummaryStatisticSpec::bj(), 0.1).unwrap();
        let doc = EnvelopeDocument::from_family(&fam);
        let back = envelope_from_json(&envelope_to_json(&doc).unwrap()).unwrap();
        assert_eq!(back.to_family().unwrap(), fam);
        assert_eq!(back.to_envelope().unwrap(), fam.full());
    }

    #[test]
    fn pvalue_csv_with_mask_and_errors() {
        let p = read_pvalues_csv("p,is_null\n0.1,1\n0.5,0\n".as_bytes()).unwrap();
        assert_eq!(p.values(), &[0.1, 0.5]);
        assert_eq!(p.null_mask(), Some(&[true, false][..]));
        match read_pvalues_csv("p\n0.1\nabc\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match read_pvalues_csv("p\n0.1\n1.5\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_pvalues_csv("q\n0.1\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn selection_csvs() {
        let calib = read_selection_calib_csv("muhat,y,c\n0,-1,0\n0.5,2,0\n".as_bytes()).unwrap();
        assert_eq!(
            calib[1],
            CalibrationPoint {
                muhat: 0.5,
                y: 2.0,
                c: 0.0
            }
        );
        let (test, truth) = read_selection_test_csv("muhat,c,y_true\n-0.3,0,1.2\n".as_bytes()).unwrap();
        assert_eq!(test[0], TestPoint { muhat: -0.3, c: 0.0 });
        assert_eq!(truth, Some(vec![1.2]));
        let (_, truth) = read_selection_test_csv("c,muhat\n0,1\n".as_bytes()).unwrap();
        assert!(truth.is_none());
    }

    #[test]
    fn curve_csv_round_trip() {
        let curve = FdpBoundCurve {
            eval_points: vec![0.0, 0.1 + 0.2, 1.0],
            rejections: vec![0, 2, 3],
            bound_naive: vec![0.3, 1.0 / 3.0, 1.0],
            bound_refined: vec![0.0, 0.25, 0.9],
            bound_combined: vec![0.0, 0.2, 0.8],
            mhat0: Some(3),
            delta: 0.1,
            fdp_true: Some(vec![0.0, 0.5, 2.0 / 3.0]),
        };
        let bytes = curve_to_csv(&curve).unwrap();
        let back = curve_from_csv(&bytes[..], 0.1, Some(3)).unwrap();
        assert_eq!(back, curve);
        assert_eq!(curve_to_csv(&back).unwrap(), bytes);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"a").unwrap();
        write_atomic(&path, b"bc").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"bc");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
