//! Dataset CSV (`id,label,f0,...`) and split-plan JSON files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::dataset::{Dataset, DatasetMeta};
use super::split::SplitPlan;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// 17 significant digits, enough for an exact `f64` round trip.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec = vec![ds.ids()[i].to_string(), ds.labels()[i].to_string()];
        rec.extend(ds.row(i).iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset_csv(ds, BufWriter::new(File::create(path)?))
}

pub fn read_dataset_csv<R: std::io::Read>(input: R, meta: DatasetMeta) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::Format("dataset CSV must start with `id,label`".into()));
    }
    for (j, h) in header.iter().skip(2).enumerate() {
        if h != format!("f{j}") {
            return Err(Error::Format(format!("unexpected column `{h}`")));
        }
    }
    let d = header.len() - 2;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse_err = |what: &str, v: &str| Error::Format(format!("bad {what} `{v}`"));
        ids.push(rec[0].parse::<u64>().map_err(|_| parse_err("id", &rec[0]))?);
        labels.push(rec[1].parse::<usize>().map_err(|_| parse_err("label", &rec[1]))?);
        for v in rec.iter().skip(2) {
            values.push(v.parse::<f64>().map_err(|_| parse_err("feature", v))?);
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::matrix(n, d, values)?, labels, ids, meta)
}

pub fn load_dataset_csv(path: &Path, meta: DatasetMeta) -> Result<Dataset> {
    read_dataset_csv(BufReader::new(File::open(path)?), meta)
}

pub fn save_split_plan(plan: &SplitPlan, path: &Path) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, plan)?;
    Ok(())
}

pub fn load_split_plan(path: &Path) -> Result<SplitPlan> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::make_blobs;
    use crate::numcore::RngStream;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let ds = make_blobs(1, 2, 3, 1.0, &RngStream::new(0, 0)).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,label,f0,f1,f2\n"));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bitwise(seed in 0u64..1000, k in 2usize..5, d in 2usize..6) {
            let ds = make_blobs(3, k, d, 1.7, &RngStream::new(seed, 0)).unwrap();
            let mut buf = Vec::new();
            write_dataset_csv(&ds, &mut buf).unwrap();
            let back = read_dataset_csv(buf.as_slice(), ds.meta()).unwrap();
            prop_assert_eq!(back.labels(), ds.labels());
            prop_assert_eq!(back.ids(), ds.ids());
            for (a, b) in back.features().values().iter().zip(ds.features().values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
