//! CSV tables and the plain-text report.

use std::fmt::Write as _;

use volterra_core::{Trajectory, TransitionTable};

/// Fixed 17-significant-digit rendering used in every CSV cell.
pub fn number(v: f64) -> String {
    format!("{v:.16e}")
}

/// `t,x1,...,xn` followed by one row per sample.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.dimension();
    let mut out = String::from("t");
    for k in 1..=n {
        let _ = write!(out, ",x{k}");
    }
    out.push('\n');
    for (t, x) in traj.times.iter().zip(&traj.states) {
        out.push_str(&number(*t));
        for v in x.iter() {
            out.push(',');
            out.push_str(&number(*v));
        }
        out.push('\n');
    }
    out
}

/// `t,phi11,phi12,...` with entries in row-major order.
pub fn stm_csv(table: &TransitionTable) -> String {
    let n = table.matrices[0].nrows();
    let mut out = String::from("t");
    for i in 1..=n {
        for j in 1..=n {
            let _ = write!(out, ",phi{i}{j}");
        }
    }
    out.push('\n');
    for (t, m) in table.grid.points().iter().zip(&table.matrices) {
        out.push_str(&number(*t));
        for i in 0..n {
            for j in 0..n {
                out.push(',');
                out.push_str(&number(m[(i, j)]));
            }
        }
        out.push('\n');
    }
    out
}

/// Plain-text report built from titled sections of `key = value` lines and tables.
#[derive(Debug, Default)]
pub struct Report {
    text: String,
}

impl Report {
    pub fn new(title: &str) -> Self {
        Self { text: format!("# {title}\n") }
    }

    pub fn section(&mut self, name: &str) {
        let _ = write!(self.text, "\n[{name}]\n");
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{key} = {value}");
    }

    pub fn line(&mut self, text: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{text}");
    }

    /// Right-aligned columns separated by two spaces.
    pub fn table(&mut self, header: &[&str], rows: &[Vec<String>]) {
        let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in rows {
            for (w, cell) in width.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let render =
            |cells: Vec<&str>| cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ");
        let _ = writeln!(self.text, "{}", render(header.to_vec()));
        for row in rows {
            let _ = writeln!(self.text, "{}", render(row.iter().map(String::as_str).collect()));
        }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Short scientific rendering for report tables.
pub fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use volterra_core::Solver;

    #[test]
    fn csv_layout() {
        let traj = Trajectory::new(
            vec![0.0, 0.5],
            vec![DVector::from_vec(vec![1.0, -2.0]), DVector::from_vec(vec![0.1, 1e-20])],
            Solver::Oracle,
        );
        let csv = trajectory_csv(&traj);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x1,x2");
        assert_eq!(lines[1], "0.0000000000000000e0,1.0000000000000000e0,-2.0000000000000000e0");
        assert_eq!(lines[2].split(',').nth(1).unwrap(), "1.0000000000000001e-1");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn numbers_round_trip() {
        for v in [std::f64::consts::PI, -1e-300, 123456.789, 0.1 + 0.2] {
            assert_eq!(number(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn report_tables_align() {
        let mut r = Report::new("demo");
        r.section("convergence");
        r.table(&["k", "norm"], &[vec!["0".into(), "1.000e0".into()], vec!["10".into(), "2.0".into()]]);
        assert_eq!(r.as_str(), "# demo\n\n[convergence]\n k     norm\n 0  1.000e0\n10      2.0\n");
    }
}
