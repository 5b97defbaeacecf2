//! Multichannel series: CSV ingestion, standardization, windowing and
//! sample autocorrelation.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `C x N` real-valued vector time series with one label per channel.
///
/// Storage is channel-major: `data[c][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSeries {
    channels: Vec<String>,
    data: Vec<Vec<f64>>,
    sample_index_origin: i64,
}

impl MultichannelSeries {
    pub fn new(channels: Vec<String>, data: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidSeries(
                "at least one channel is required".into(),
            ));
        }
        if channels.len() != data.len() {
            return Err(Error::InvalidSeries(format!(
                "{} labels for {} data rows",
                channels.len(),
                data.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &channels {
            if label.is_empty() {
                return Err(Error::InvalidSeries(
                    "channel labels must be nonempty".into(),
                ));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::DuplicateLabel(label.clone()));
            }
        }
        let n = data[0].len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        for (label, row) in channels.iter().zip(&data) {
            if row.len() != n {
                return Err(Error::InvalidSeries(format!(
                    "channel {label:?} has {} samples, expected {n}",
                    row.len()
                )));
            }
            if let Some(t) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidSeries(format!(
                    "channel {label:?} has a non-finite value at sample {t}"
                )));
            }
        }
        Ok(Self {
            channels,
            data,
            sample_index_origin: 0,
        })
    }

    /// Builds a series from a `C x N` matrix (one row per channel).
    pub fn from_matrix(channels: Vec<String>, matrix: &DMatrix<f64>) -> Result<Self> {
        let data = matrix
            .row_iter()
            .map(|row| row.iter().copied().collect())
            .collect();
        Self::new(channels, data)
    }

    /// Labels "ch1".."chC".
    pub fn default_labels(count: usize) -> Vec<String> {
        (1..=count).map(|i| format!("ch{i}")).collect()
    }

    pub fn with_origin(mut self, origin: i64) -> Self {
        self.sample_index_origin = origin;
        self
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.data[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn sample_index_origin(&self) -> i64 {
        self.sample_index_origin
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.data[index]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn channel_index(&self, label: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownChannel(label.to_string()))
    }

    pub fn channel_by_label(&self, label: &str) -> Result<&[f64]> {
        Ok(self.channel(self.channel_index(label)?))
    }

    /// Value of channel `c` at sample `t`.
    #[inline]
    pub fn at(&self, c: usize, t: usize) -> f64 {
        self.data[c][t]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_channels(), self.len(), |c, t| self.data[c][t])
    }

    /// Contiguous sub-series `[start, start + len)`; the origin shifts with it.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::InvalidArgument(format!(
                "window [{start}, {}) outside series of length {}",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            channels: self.channels.clone(),
            data: self
                .data
                .iter()
                .map(|row| row[start..start + len].to_vec())
                .collect(),
            sample_index_origin: self.sample_index_origin + start as i64,
        })
    }

    /// Keeps only the named channels, in the given order.
    pub fn select(&self, labels: &[&str]) -> Result<Self> {
        let mut channels = Vec::with_capacity(labels.len());
        let mut data = Vec::with_capacity(labels.len());
        for label in labels {
            let idx = self.channel_index(label)?;
            channels.push(self.channels[idx].clone());
            data.push(self.data[idx].clone());
        }
        Ok(Self::new(channels, data)?.with_origin(self.sample_index_origin))
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P, delimiter: u8) -> Result<()> {
        let file = File::create(path)?;
        self.write_csv_to(file, delimiter)
    }

    /// Writes a header row plus one row per sample. Floats use the shortest
    /// decimal that parses back to the identical `f64` (at most 17 significant digits).
    pub fn write_csv_to<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(writer);
        w.write_record(&self.channels).map_err(csv_io)?;
        let mut record = Vec::with_capacity(self.n_channels());
        for t in 0..self.len() {
            record.clear();
            record.extend(self.data.iter().map(|row| format!("{}", row[t])));
            w.write_record(&record).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(err: csv::Error) -> Error {
    Error::Io(std::io::Error::other(err))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    /// Header name of a time/index column to drop.
    pub time_column: Option<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: true,
            time_column: None,
        }
    }
}

pub fn load_csv<P: AsRef<Path>>(path: P, options: &CsvOptions) -> Result<MultichannelSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_csv(file, options)
}

pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<MultichannelSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Option<Vec<String>> = if options.has_header {
        let h = rdr.headers().map_err(|e| Error::ParseError {
            row: 0,
            column: 0,
            message: e.to_string(),
        })?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let time_idx = match (&options.time_column, &header) {
        (None, _) => None,
        (Some(name), Some(h)) => Some(
            h.iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::UnknownChannel(name.clone()))?,
        ),
        (Some(name), None) => {
            return Err(Error::InvalidArgument(format!(
                "time column {name:?} requires a header row"
            )))
        }
    };

    let mut width = header.as_ref().map(Vec::len);
    let mut data: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::ParseError {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        // Skip blank lines.
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::ParseError {
                row,
                column: record.len().min(expected) + 1,
                message: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        if data.is_empty() {
            data = vec![Vec::new(); expected - usize::from(time_idx.is_some())];
        }
        let mut c = 0;
        for (col, cell) in record.iter().enumerate() {
            if Some(col) == time_idx {
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| Error::ParseError {
                row,
                column: col + 1,
                message: format!("{cell:?} is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::ParseError {
                    row,
                    column: col + 1,
                    message: format!("{cell:?} is not finite"),
                });
            }
            data[c].push(value);
            c += 1;
        }
    }
    if data.is_empty() || data[0].is_empty() {
        return Err(Error::EmptyInput);
    }

    let labels = match header {
        Some(h) => h
            .into_iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != time_idx)
            .map(|(_, name)| name)
            .collect(),
        None => MultichannelSeries::default_labels(data.len()),
    };
    MultichannelSeries::new(labels, data)
}

/// Per-channel affine parameters of a standardization, `z = (y - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Preprocessing {
    pub fn identity(channels: usize) -> Self {
        Self {
            means: vec![0.0; channels],
            stds: vec![1.0; channels],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.means.iter().all(|&m| m == 0.0) && self.stds.iter().all(|&s| s == 1.0)
    }

    /// Maps standardized values back to raw sensor units.
    pub fn destandardize(&self, series: &MultichannelSeries) -> Result<MultichannelSeries> {
        if series.n_channels() != self.means.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} channels vs {} preprocessing entries",
                series.n_channels(),
                self.means.len()
            )));
        }
        let data = series
            .rows()
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(row, (&m, &s))| row.iter().map(|v| v * s + m).collect())
            .collect();
        Ok(MultichannelSeries::new(series.channels().to_vec(), data)?
            .with_origin(series.sample_index_origin()))
    }
}

/// Mean and population (1/N) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn is_constant(mean: f64, std: f64) -> bool {
    std == 0.0 || std <= 8.0 * f64::EPSILON * mean.abs()
}

/// Centers every channel and scales it to unit population standard deviation.
pub fn standardize(series: &MultichannelSeries) -> Result<(MultichannelSeries, Preprocessing)> {
    let mut means = Vec::with_capacity(series.n_channels());
    let mut stds = Vec::with_capacity(series.n_channels());
    let mut data = Vec::with_capacity(series.n_channels());
    for (label, row) in series.channels().iter().zip(series.rows()) {
        let (mean, std) = mean_std(row);
        if is_constant(mean, std) {
            return Err(Error::ConstantChannel(label.clone()));
        }
        data.push(row.iter().map(|v| (v - mean) / std).collect());
        means.push(mean);
        stds.push(std);
    }
    let out = MultichannelSeries::new(series.channels().to_vec(), data)?
        .with_origin(series.sample_index_origin());
    Ok((out, Preprocessing { means, stds }))
}

/// Autocorrelations `rho_1..rho_L` of one channel (`rho_0 = 1` is implicit).
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrelationLags {
    pub channel: String,
    pub rho: Vec<f64>,
}

impl AutocorrelationLags {
    pub fn lag_count(&self) -> usize {
        self.rho.len()
    }
}

/// Biased sample autocorrelation of a slice: `rho_k = c_k / c_0` with
/// `c_k = (1/N) sum_{t=k}^{N-1} (y_t - mean)(y_{t-k} - mean)`.
///
/// Returns `None` for a constant slice.
pub fn biased_autocorrelation(values: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let (mean, std) = mean_std(values);
    if is_constant(mean, std) {
        return None;
    }
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum();
    Some(
        (1..=max_lag)
            .map(|k| {
                let ck: f64 = centered[k..]
                    .iter()
                    .zip(&centered[..centered.len() - k])
                    .map(|(a, b)| a * b)
                    .sum();
                ck / c0
            })
            .collect(),
    )
}

pub fn autocorrelation(
    series: &MultichannelSeries,
    channel: &str,
    max_lag: usize,
) -> Result<AutocorrelationLags> {
    let values = series.channel_by_label(channel)?;
    if max_lag >= values.len() {
        return Err(Error::LagTooLarge {
            lag: max_lag,
            len: values.len(),
        });
    }
    let rho = biased_autocorrelation(values, max_lag)
        .ok_or_else(|| Error::ConstantChannel(channel.to_string()))?;
    Ok(AutocorrelationLags {
        channel: channel.to_string(),
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn opts(has_header: bool) -> CsvOptions {
        CsvOptions {
            has_header,
            ..CsvOptions::default()
        }
    }

    #[test]
    fn headerless_two_columns() {
        let s = read_csv("1,2\n3,4".as_bytes(), &opts(false)).unwrap();
        assert_eq!(s.n_channels(), 2);
        assert_eq!(s.len(), 2);
        assert_eq!(s.channels(), ["ch1", "ch2"]);
        assert_eq!(s.channel(1), [2.0, 4.0]);
    }

    #[test]
    fn header_labels_and_time_column() {
        let text = "time,b1,b2,b3,b4\n0,1,2,3,4\n1,5,6,7,8\n";
        let o = CsvOptions {
            time_column: Some("time".into()),
            ..CsvOptions::default()
        };
        let s = read_csv(text.as_bytes(), &o).unwrap();
        assert_eq!(s.channels(), ["b1", "b2", "b3", "b4"]);
        assert_eq!(s.channel(3), [4.0, 8.0]);
    }

    #[test]
    fn four_channel_file_with_many_rows() {
        let mut text = String::from("b1,b2,b3,b4\n");
        for i in 0..20480 {
            text.push_str(&format!("{i},{},{},{}\n", -i, i % 7, 0.5 * i as f64));
        }
        let s = read_csv(text.as_bytes(), &opts(true)).unwrap();
        assert_eq!((s.n_channels(), s.len()), (4, 20480));
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let err = read_csv("1,abc".as_bytes(), &opts(false)).unwrap_err();
        assert!(
            matches!(
                err,
                Error::ParseError {
                    row: 1,
                    column: 2,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn csv_error_cases() {
        assert!(matches!(
            read_csv("a,b\n".as_bytes(), &opts(true)),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            read_csv("a,a\n1,2\n".as_bytes(), &opts(true)),
            Err(Error::DuplicateLabel(l)) if l == "a"
        ));
        assert!(matches!(
            read_csv("1,2\n3\n".as_bytes(), &opts(false)),
            Err(Error::ParseError { row: 2, .. })
        ));
        assert!(matches!(
            read_csv("1,nan\n".as_bytes(), &opts(false)),
            Err(Error::ParseError {
                row: 1,
                column: 2,
                ..
            })
        ));
        assert!(matches!(
            load_csv("/definitely/not/here.csv", &CsvOptions::default()),
            Err(Error::FileNotFound(_))
        ));
    }

    #[test]
    fn semicolon_delimiter() {
        let o = CsvOptions {
            delimiter: b';',
            has_header: false,
            time_column: None,
        };
        let s = read_csv("1;2;3\n4;5;6\n".as_bytes(), &o).unwrap();
        assert_eq!(s.n_channels(), 3);
    }

    #[test]
    fn standardize_simple_channel() {
        let s = MultichannelSeries::new(vec!["a".into()], vec![vec![1.0, 2.0, 3.0]]).unwrap();
        let (z, pre) = standardize(&s).unwrap();
        assert_eq!(pre.means, [2.0]);
        assert!((pre.stds[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(z.channel(0).iter().sum::<f64>().abs() < 1e-15);
        let back = pre.destandardize(&z).unwrap();
        for (a, b) in back.channel(0).iter().zip(s.channel(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_constant_channel_fails() {
        let s = MultichannelSeries::new(
            vec!["x".into(), "flat".into()],
            vec![vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]],
        )
        .unwrap();
        assert!(matches!(standardize(&s), Err(Error::ConstantChannel(l)) if l == "flat"));
        let s = MultichannelSeries::new(vec!["x".into()], vec![vec![0.1; 7]]).unwrap();
        assert!(matches!(standardize(&s), Err(Error::ConstantChannel(_))));
    }

    #[test]
    fn alternating_series_has_negative_unit_lag_one() {
        let v: Vec<f64> = (0..1000)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let s = MultichannelSeries::new(vec!["alt".into()], vec![v]).unwrap();
        let ac = autocorrelation(&s, "alt", 2).unwrap();
        assert!((ac.rho[0] + 1.0).abs() < 2e-3, "{:?}", ac.rho);
        assert!((ac.rho[1] - 1.0).abs() < 3e-3);
    }

    #[test]
    fn autocorrelation_errors() {
        let s = MultichannelSeries::new(vec!["a".into()], vec![vec![1.0, 2.0, 4.0]]).unwrap();
        assert!(matches!(
            autocorrelation(&s, "a", 3),
            Err(Error::LagTooLarge { lag: 3, len: 3 })
        ));
        assert!(matches!(
            autocorrelation(&s, "b", 1),
            Err(Error::UnknownChannel(_))
        ));
    }

    #[test]
    fn window_and_select() {
        let s = MultichannelSeries::new(
            vec!["a".into(), "b".into()],
            vec![vec![0.0, 1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0, 7.0]],
        )
        .unwrap();
        let w = s.window(1, 2).unwrap();
        assert_eq!(w.channel(1), [5.0, 6.0]);
        assert_eq!(w.sample_index_origin(), 1);
        assert!(s.window(3, 2).is_err());
        let b = s.select(&["b"]).unwrap();
        assert_eq!(b.channels(), ["b"]);
    }

    #[test]
    fn series_invariants_are_enforced() {
        assert!(MultichannelSeries::new(vec![], vec![]).is_err());
        assert!(MultichannelSeries::new(vec!["".into()], vec![vec![1.0]]).is_err());
        assert!(
            MultichannelSeries::new(vec!["a".into(), "b".into()], vec![vec![1.0], vec![]]).is_err()
        );
        assert!(MultichannelSeries::new(vec!["a".into()], vec![vec![f64::NAN]]).is_err());
    }

    fn series_strategy() -> impl Strategy<Value = MultichannelSeries> {
        (1usize..4, 3usize..40).prop_flat_map(|(c, n)| {
            proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, n), c).prop_map(
                move |data| {
                    MultichannelSeries::new(MultichannelSeries::default_labels(c), data).unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(s in series_strategy()) {
            let mut buf = Vec::new();
            s.write_csv_to(&mut buf, b',').unwrap();
            let back = read_csv(buf.as_slice(), &CsvOptions::default()).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn standardize_is_idempotent(s in series_strategy()) {
            let (z, _) = standardize(&s).unwrap();
            for row in z.rows() {
                let (m, sd) = mean_std(row);
                prop_assert!(m.abs() < 1e-10);
                prop_assert!((sd - 1.0).abs() < 1e-10);
            }
            let (z2, _) = standardize(&z).unwrap();
            for (a, b) in z.rows().iter().flatten().zip(z2.rows().iter().flatten()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn biased_autocorrelation_is_bounded_and_psd(
            v in proptest::collection::vec(-10.0f64..10.0, 8..64),
            lags in 1usize..6,
        ) {
            let Some(rho) = biased_autocorrelation(&v, lags) else { return Ok(()); };
            for r in &rho {
                prop_assert!(r.abs() <= 1.0 + 1e-12);
            }
            let l = rho.len() + 1;
            let toeplitz = DMatrix::from_fn(l, l, |i, j| {
                let k = i.abs_diff(j);
                if k == 0 { 1.0 } else { rho[k - 1] }
            });
            let min = SymmetricEigen::new(toeplitz).eigenvalues.min();
            prop_assert!(min >= -1e-9, "min eigenvalue {}", min);
        }
    }
}
