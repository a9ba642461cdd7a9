use std::path::Path;

use crate::engine::Tensor;
use crate::error::{invalid, Error, Result};

/// Inputs and targets with a fixed train/test partition of row indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N × …]`
    pub inputs: Tensor,
    /// `[N × …]`
    pub targets: Tensor,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Seed the data and partition were generated from.
    pub seed: u64,
}

impl Dataset {
    /// Rows `0..n_train` train, the rest test.
    pub fn split_at(inputs: Tensor, targets: Tensor, n_train: usize, seed: u64) -> Result<Self> {
        let n = rows(&inputs);
        if n_train > n {
            return Err(invalid(format!("train size {n_train} exceeds {n} rows")));
        }
        let ds = Dataset {
            inputs,
            targets,
            train: (0..n_train).collect(),
            test: (n_train..n).collect(),
            seed,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        rows(&self.inputs)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row counts agree and the partition is disjoint and exhaustive.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if rows(&self.targets) != n {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                lhs: self.inputs.shape().to_vec(),
                rhs: self.targets.shape().to_vec(),
            });
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n || seen[i] {
                return Err(invalid(format!("row {i} is out of range or assigned twice")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("train/test partition does not cover every row"));
        }
        Ok(())
    }

    pub fn train_inputs(&self) -> Result<Tensor> {
        gather_rows(&self.inputs, &self.train)
    }

    pub fn train_targets(&self) -> Result<Tensor> {
        gather_rows(&self.targets, &self.train)
    }

    pub fn test_inputs(&self) -> Result<Tensor> {
        gather_rows(&self.inputs, &self.test)
    }

    pub fn test_targets(&self) -> Result<Tensor> {
        gather_rows(&self.targets, &self.test)
    }

    /// Writes `x0.., y0..` columns, one line per row in index order, with
    /// 17 significant digits so values round-trip exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let (nx, ny) = (row_len(&self.inputs), row_len(&self.targets));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = (0..nx).map(|j| format!("x{j}")).chain((0..ny).map(|j| format!("y{j}"))).collect();
        w.write_record(&header).map_err(csv_err)?;
        for r in 0..self.len() {
            let xs = &self.inputs.data()[r * nx..(r + 1) * nx];
            let ys = &self.targets.data()[r * ny..(r + 1) * ny];
            let record: Vec<String> = xs.iter().chain(ys).map(|v| format!("{v:.16e}")).collect();
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`Dataset::write_csv`]; shapes give the
    /// per-row layout (`[N, …]` with any `N`).
    pub fn read_csv(path: &Path, input_shape: &[usize], target_shape: &[usize], n_train: usize, seed: u64) -> Result<Self> {
        let nx: usize = input_shape[1..].iter().product();
        let ny: usize = target_shape[1..].iter().product();
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let width = r.headers().map_err(csv_err)?.len();
        if width != nx + ny {
            return Err(invalid(format!("{}: expected {} columns, found {width}", path.display(), nx + ny)));
        }
        let (mut xs, mut ys, mut n) = (Vec::new(), Vec::new(), 0);
        for record in r.records() {
            let record = record.map_err(csv_err)?;
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| invalid(format!("{}: bad number {field:?}", path.display())))?;
                if j < nx {
                    xs.push(v)
                } else {
                    ys.push(v)
                }
            }
            n += 1;
        }
        let mut ishape = input_shape.to_vec();
        ishape[0] = n;
        let mut tshape = target_shape.to_vec();
        tshape[0] = n;
        Dataset::split_at(Tensor::new(ishape, xs)?, Tensor::new(tshape, ys)?, n_train, seed)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

pub fn rows(t: &Tensor) -> usize {
    t.shape().first().copied().unwrap_or(1)
}

fn row_len(t: &Tensor) -> usize {
    t.shape()[1..].iter().product()
}

/// Rows of `t` at `indices`, keeping the trailing shape.
pub fn gather_rows(t: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let n = rows(t);
    let width = row_len(t);
    let mut data = Vec::with_capacity(indices.len() * width);
    for &i in indices {
        if i >= n {
            return Err(invalid(format!("row {i} out of range for {n} rows")));
        }
        data.extend_from_slice(&t.data()[i * width..(i + 1) * width]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Rng;

    #[test]
    fn partition_checks() {
        let x = Tensor::zeros([4, 2]);
        let y = Tensor::zeros([4, 1]);
        let ds = Dataset::split_at(x.clone(), y.clone(), 3, 0).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (3, 1));
        let mut bad = ds.clone();
        bad.test = vec![2];
        assert!(bad.validate().is_err());
        assert!(Dataset::split_at(x, Tensor::zeros([3, 1]), 2, 0).is_err());
    }

    #[test]
    fn gather_keeps_trailing_shape() {
        let t = Tensor::new([3, 2, 2], (0..12).map(f64::from).collect()).unwrap();
        let g = gather_rows(&t, &[2, 0]).unwrap();
        assert_eq!(g.shape(), &[2, 2, 2]);
        assert_eq!(g.data(), &[8.0, 9.0, 10.0, 11.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = Rng::seed(3);
        let x = rng.uniform([5, 2], -4.0, 4.0).unwrap().map(|v| v * 1e-7 + v.sinh()).unwrap();
        let y = rng.uniform([5, 1], -300.0, 300.0).unwrap();
        let ds = Dataset::split_at(x, y, 4, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,x1,y0\n"));
        let back = Dataset::read_csv(&path, &[0, 2], &[0, 1], 4, 9).unwrap();
        assert_eq!(back, ds);
    }
}
