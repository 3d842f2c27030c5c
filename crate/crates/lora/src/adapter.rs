use rand::Rng;

use crate::error::{shape, LoraError};
use crate::{Matrix, Scalar};

const HEADER: &str = "dscre-lora-adapter v1";

/// Low-rank update `ΔW = s · B A` for a frozen `d x k` weight.
///
/// `a` is `r x k`, `b` is `d x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<T> {
    a: Matrix<T>,
    b: Matrix<T>,
    scaling: T,
}

impl<T: Scalar> LoraAdapter<T> {
    pub fn new(a: Matrix<T>, b: Matrix<T>, scaling: T) -> Result<Self, LoraError> {
        let (r, k) = a.shape();
        let (d, rb) = b.shape();
        if rb != r {
            return Err(shape("adapter", format!("A is {r}x{k} but B is {d}x{rb}")));
        }
        let limit = d.min(k);
        if r >= limit {
            return Err(LoraError::Rank { rank: r, limit });
        }
        if !scaling.is_finite() {
            return Err(shape("adapter", "scaling is not finite"));
        }
        Ok(Self { a, b, scaling })
    }

    /// Fresh adapter: `A ~ U(-init_scale, init_scale)`, `B = 0`.
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        k: usize,
        rank: usize,
        scaling: T,
        init_scale: T,
        rng: &mut R,
    ) -> Result<Self, LoraError> {
        if rank == 0 || rank >= d.min(k) {
            return Err(LoraError::Rank { rank, limit: d.min(k) });
        }
        let a = Matrix::uniform(rank, k, init_scale, rng)?;
        let b = Matrix::zeros(d, rank)?;
        Self::new(a, b, scaling)
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub(crate) fn a_mut(&mut self) -> &mut Matrix<T> {
        &mut self.a
    }

    pub(crate) fn b_mut(&mut self) -> &mut Matrix<T> {
        &mut self.b
    }

    pub fn scaling(&self) -> T {
        self.scaling
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    /// `(d, k)` of the weight this adapter modifies.
    pub fn target_shape(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }

    /// Trainable parameter count, `r (k + d)`.
    pub fn params(&self) -> usize {
        let (d, k) = self.target_shape();
        self.rank() * (k + d)
    }

    pub fn delta(&self) -> Matrix<T> {
        self.b
            .matmul(&self.a)
            .expect("adapter shapes checked at construction")
            .scale(self.scaling)
    }

    /// Returns `(A x, s · B A x)`.
    pub(crate) fn apply(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>), LoraError> {
        let u = self.a.matvec(x)?;
        let mut y = self.b.matvec(&u)?;
        for v in &mut y {
            *v = *v * self.scaling;
        }
        Ok((u, y))
    }

    pub fn save(&self) -> String {
        let (d, k) = self.target_shape();
        let mut out = format!(
            "{HEADER}\nshape {d} {k} {}\nscaling {}\n",
            self.rank(),
            num(self.scaling)
        );
        for (name, m) in [("A", &self.a), ("B", &self.b)] {
            out.push_str(name);
            out.push('\n');
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|&v| num(v)).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn load(text: &str) -> Result<Self, LoraError> {
        let bad = |m: &str| LoraError::Format(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing header"));
        }
        let dims: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("shape "))
            .ok_or_else(|| bad("missing shape line"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad shape")))
            .collect::<Result<_, _>>()?;
        let [d, k, r] = dims[..] else {
            return Err(bad("shape needs d k r"));
        };
        let scaling = lines
            .next()
            .and_then(|l| l.strip_prefix("scaling "))
            .ok_or_else(|| bad("missing scaling line"))
            .and_then(|t| parse_num::<T>(t))?;
        let mut block = |name: &str, rows: usize, cols: usize| -> Result<Matrix<T>, LoraError> {
            if lines.next() != Some(name) {
                return Err(LoraError::Format(format!("missing {name} block")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let line = lines
                    .next()
                    .ok_or_else(|| LoraError::Format(format!("{name} is truncated")))?;
                let row: Vec<T> = line.split_whitespace().map(parse_num).collect::<Result<_, _>>()?;
                if row.len() != cols {
                    return Err(LoraError::Format(format!(
                        "{name} row has {} values, expected {cols}",
                        row.len()
                    )));
                }
                data.extend(row);
            }
            Matrix::new(rows, cols, data)
        };
        let a = block("A", r, k)?;
        let b = block("B", d, r)?;
        Self::new(a, b, scaling)
    }
}

// f64 Display is the shortest string that round-trips.
fn num<T: Scalar>(v: T) -> String {
    format!("{}", v.to_f64().unwrap_or(f64::NAN))
}

fn parse_num<T: Scalar>(t: &str) -> Result<T, LoraError> {
    t.parse::<f64>()
        .ok()
        .and_then(T::from_f64)
        .ok_or_else(|| LoraError::Format(format!("bad number {t:?}")))
}

fn check_target<T: Scalar>(w0: &Matrix<T>, adapter: &LoraAdapter<T>) -> Result<(), LoraError> {
    if w0.shape() != adapter.target_shape() {
        let (d, k) = adapter.target_shape();
        return Err(shape(
            "lora",
            format!("weight is {}x{} but adapter targets {d}x{k}", w0.rows(), w0.cols()),
        ));
    }
    Ok(())
}

/// `W0 x + s · B (A x)`, computed without forming `B A`.
pub fn lora_forward<T: Scalar>(w0: &Matrix<T>, adapter: &LoraAdapter<T>, x: &[T]) -> Result<Vec<T>, LoraError> {
    check_target(w0, adapter)?;
    let mut y = w0.matvec(x)?;
    let (_, delta) = adapter.apply(x)?;
    for (o, d) in y.iter_mut().zip(delta) {
        *o = *o + d;
    }
    Ok(y)
}

/// `W0 + s · B A`, a plain matrix with no adapter left over.
pub fn merge<T: Scalar>(w0: &Matrix<T>, adapter: &LoraAdapter<T>) -> Result<Matrix<T>, LoraError> {
    check_target(w0, adapter)?;
    w0.add(&adapter.delta())
}
