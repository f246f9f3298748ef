//! Record CSV (`t,ch0,...`) and annotation CSV (`onset_s,offset_s`).

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use super::record::{validate_annotations, Annotation, Channel, EEGRecord};
use crate::error::{Error, Result};

/// Relative tolerance on the sample spacing.
const SPACING_TOL: f64 = 1e-6;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<EEGRecord> {
    let path = path.as_ref();
    read_csv_from(open(path)?, &path.display().to_string())
}

/// Parse a record. The sampling rate is recovered from the time column and
/// snapped to the nearest integer when it is within tolerance of one.
pub fn read_csv_from<R: Read>(r: R, context: &str) -> Result<EEGRecord> {
    let err = |m: String| Error::format(context, m);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    if headers.len() < 2 || &headers[0] != "t" {
        return Err(err(format!("header must be `t,<channel>,...` (got `{}`)", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut times = Vec::new();
    let mut columns: Vec<Vec<i16>> = vec![Vec::new(); names.len()];
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| err(format!("line {line}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(err(format!("line {line}: {} fields, expected {}", rec.len(), headers.len())));
        }
        let t: f64 = rec[0].parse().map_err(|_| err(format!("line {line}: bad time `{}`", &rec[0])))?;
        if !t.is_finite() {
            return Err(err(format!("line {line}: non-finite time")));
        }
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(err(format!("line {line}: time {t} does not increase")));
            }
        }
        times.push(t);
        for (c, col) in columns.iter_mut().enumerate() {
            let v = &rec[c + 1];
            col.push(v.parse().map_err(|_| err(format!("line {line}: `{v}` is not a 16-bit integer sample")))?);
        }
    }
    if times.len() < 2 {
        return Err(err("need at least 2 samples to determine the sampling rate".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > SPACING_TOL * dt.max(1.0) {
            return Err(err(format!("line {}: sample spacing {} differs from {dt}", i + 3, w[1] - w[0])));
        }
    }
    let mut fs = 1.0 / dt;
    if (fs - fs.round()).abs() <= SPACING_TOL * fs {
        fs = fs.round();
    }
    let channels = names.into_iter().zip(columns).map(|(name, samples)| Channel { name, samples }).collect();
    EEGRecord::new(fs, channels, Vec::new())
}

pub fn write_csv<W: Write>(rec: &EEGRecord, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::format("record csv", e.to_string());
    let mut header = vec!["t".to_string()];
    header.extend(rec.channel_names());
    wtr.write_record(&header).map_err(io)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..rec.len() {
        row.clear();
        row.push((i as f64 / rec.fs()).to_string());
        row.extend(rec.channels().iter().map(|c| c.samples[i].to_string()));
        wtr.write_record(&row).map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::io("record csv", e))
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    read_annotations_from(open(path)?, &path.display().to_string())
}

/// Lines `onset_s,offset_s`; an optional header line with those names is
/// accepted. Blank lines and `#` comments are ignored.
pub fn read_annotations_from<R: Read>(mut r: R, context: &str) -> Result<Vec<Annotation>> {
    let err = |m: String| Error::format(context, m);
    let mut text = String::new();
    r.read_to_string(&mut text).map_err(|e| Error::io(context, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(err(format!("line {}: expected `onset_s,offset_s`", i + 1)));
        }
        if out.is_empty() && fields == ["onset_s", "offset_s"] {
            continue;
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| err(format!("line {}: bad number `{s}`", i + 1)));
        out.push(Annotation::new(parse(fields[0])?, parse(fields[1])?));
    }
    validate_annotations(&out, None)?;
    Ok(out)
}

pub fn write_annotations<W: Write>(ann: &[Annotation], mut w: W) -> Result<()> {
    let io = |e| Error::io("annotations", e);
    writeln!(w, "onset_s,offset_s").map_err(io)?;
    for a in ann {
        writeln!(w, "{},{}", a.onset_s, a.offset_s).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows() {
        let text = "t,ch0,ch1\n0,1,-2\n0.001,3,4\n0.002,-32768,32767\n";
        let r = read_csv_from(text.as_bytes(), "test").unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.fs(), 1000.0);
        assert_eq!(r.channel_names(), vec!["ch0", "ch1"]);
        assert_eq!(r.frame(2), vec![-32768, 32767]);
    }

    #[test]
    fn rejects_bad_csv() {
        for bad in [
            "t,ch0\n0,1\n0.001\n",
            "t,ch0\n0,1\n0.001,2\n0.0005,3\n",
            "t,ch0\n0,1\n0.001,2\n0.003,3\n",
            "t,ch0\n0,1\n0.001,40000\n",
            "x,ch0\n0,1\n0.001,2\n",
            "t,ch0\n0,1\n",
        ] {
            assert!(read_csv_from(bad.as_bytes(), "test").is_err(), "{bad:?}");
        }
    }

    #[test]
    fn round_trip() {
        let samples = |k: i16| (0..500).map(|i| (i as i16).wrapping_mul(k)).collect();
        let rec = EEGRecord::new(
            256.0,
            vec![Channel { name: "FP1-F7".into(), samples: samples(37) }, Channel { name: "C3".into(), samples: samples(-11) }],
            vec![],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&rec, &mut buf).unwrap();
        assert_eq!(read_csv_from(&buf[..], "rt").unwrap(), rec);
    }

    #[test]
    fn annotations() {
        let a = read_annotations_from("onset_s,offset_s\n# comment\n1.5, 3\n\n10,12.25\n".as_bytes(), "a").unwrap();
        assert_eq!(a, vec![Annotation::new(1.5, 3.0), Annotation::new(10.0, 12.25)]);
        assert!(read_annotations_from("1,5\n4,6\n".as_bytes(), "a").is_err());
        assert!(read_annotations_from("1,5,7\n".as_bytes(), "a").is_err());
        let mut buf = Vec::new();
        write_annotations(&a, &mut buf).unwrap();
        assert_eq!(read_annotations_from(&buf[..], "a").unwrap(), a);
    }
}
