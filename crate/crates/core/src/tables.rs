//! Reference values of the sharpness study and drivers that recompute
//! them.
//!
//! Tables 1 and 2 list the regular meshes with the `κ*` and `κ**`
//! penalties, table 3 compares against the trace-inequality penalty, and
//! tables 4 to 6 give ranges of the two ratios over deformed meshes,
//! piecewise linear media, and electromagnetic and elastic media.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::MeshFamily;
use crate::stability::{
    mulder_time_step, sharpness_ratios, time_step, FamilyStudy, PenaltyChoice, SharpnessRow, StabilityOptions, Variant,
};

/// Tolerances used when comparing with the reference values.
pub const DT_TOL: f64 = 5e-4;
pub const CMIN_TOL: f64 = 0.01;
pub const RATIO_TOL: f64 = 0.02;

/// Reference row of tables 1 and 2.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegularRef {
    pub family: MeshFamily,
    pub p: usize,
    pub c_min: f64,
    pub dt_eta_min: f64,
    pub dt_eta: f64,
    pub dt_est: f64,
    pub ratio1: f64,
    pub ratio2: f64,
}

/// Reference row of table 3.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MulderRef {
    pub family: MeshFamily,
    pub p: usize,
    pub dt_eta: f64,
    pub dt_star: f64,
    pub dt_star2: f64,
    pub ratio_star: f64,
    pub ratio_star2: f64,
}

/// Reference row of tables 4 to 6: ranges of both ratios over a set of
/// parameter choices.
#[derive(Debug, Clone, Serialize)]
pub struct RangeRef {
    pub name: &'static str,
    pub families: Vec<MeshFamily>,
    pub p: usize,
    pub ratio1: (f64, f64),
    pub ratio2: (f64, f64),
}

const REGULAR: [MeshFamily; 5] = [
    MeshFamily::OneD,
    MeshFamily::Square,
    MeshFamily::Triangular,
    MeshFamily::Cubic,
    MeshFamily::Tetrahedral,
];

#[rustfmt::skip]
const TABLE1: [[f64; 6]; 15] = [
    [1.00, 0.5774, 0.5774, 0.5774, 1.00, 1.00],
    [1.00, 0.2582, 0.2582, 0.2582, 1.00, 1.00],
    [1.00, 0.1533, 0.1533, 0.1533, 1.00, 1.00],
    [0.25, 0.4082, 0.2357, 0.2019, 1.73, 1.17],
    [0.33, 0.1826, 0.1170, 0.0956, 1.56, 1.22],
    [0.38, 0.1084, 0.0694, 0.0554, 1.56, 1.25],
    [0.67, 0.2579, 0.2273, 0.1948, 1.13, 1.17],
    [0.69, 0.1406, 0.1250, 0.1048, 1.12, 1.19],
    [0.70, 0.0906, 0.0739, 0.0621, 1.23, 1.19],
    [0.14, 0.3333, 0.1361, 0.1172, 2.45, 1.16],
    [0.20, 0.1491, 0.0678, 0.0554, 2.20, 1.22],
    [0.23, 0.0885, 0.0405, 0.0322, 2.19, 1.26],
    [0.38, 0.1035, 0.0635, 0.0560, 1.63, 1.13],
    [0.44, 0.0598, 0.0384, 0.0336, 1.56, 1.14],
    [0.48, 0.0360, 0.0243, 0.0212, 1.48, 1.15],
];

#[rustfmt::skip]
const TABLE2: [[f64; 6]; 15] = [
    [1.00, 0.5774, 0.5774, 0.5774, 1.00, 1.00],
    [1.00, 0.2582, 0.2582, 0.2582, 1.00, 1.00],
    [1.00, 0.1533, 0.1533, 0.1533, 1.00, 1.00],
    [1.00, 0.4082, 0.4082, 0.4082, 1.00, 1.00],
    [1.00, 0.1826, 0.1826, 0.1826, 1.00, 1.00],
    [1.00, 0.1084, 0.1084, 0.1084, 1.00, 1.00],
    [1.00, 0.2582, 0.2582, 0.2427, 1.00, 1.06],
    [0.96, 0.1406, 0.1399, 0.1275, 1.01, 1.10],
    [0.96, 0.0906, 0.0896, 0.0755, 1.01, 1.19],
    [1.00, 0.3333, 0.3333, 0.3333, 1.00, 1.00],
    [1.00, 0.1491, 0.1491, 0.1491, 1.00, 1.00],
    [1.00, 0.0885, 0.0885, 0.0885, 1.00, 1.00],
    [0.75, 0.1040, 0.0918, 0.0803, 1.13, 1.14],
    [0.74, 0.0599, 0.0510, 0.0455, 1.17, 1.15],
    [0.81, 0.0359, 0.0320, 0.0279, 1.12, 1.15],
];

/// Reference rows of table 1 (`Variant::Star`) or 2 (`Variant::Star2`).
pub fn regular_reference(variant: Variant) -> Vec<RegularRef> {
    let t = match variant {
        Variant::Star => &TABLE1,
        Variant::Star2 => &TABLE2,
    };
    t.iter()
        .enumerate()
        .map(|(i, r)| RegularRef {
            family: REGULAR[i / 3],
            p: i % 3 + 1,
            c_min: r[0],
            dt_eta_min: r[1],
            dt_eta: r[2],
            dt_est: r[3],
            ratio1: r[4],
            ratio2: r[5],
        })
        .collect()
}

pub fn mulder_reference() -> Vec<MulderRef> {
    #[rustfmt::skip]
    let rows = [
        (MeshFamily::Triangular, 1, [0.2280, 0.2273, 0.2582, 1.00, 1.13]),
        (MeshFamily::Triangular, 2, [0.1002, 0.1250, 0.1399, 1.25, 1.40]),
        (MeshFamily::Triangular, 3, [0.0567, 0.0739, 0.0896, 1.30, 1.58]),
        (MeshFamily::Tetrahedral, 1, [0.0689, 0.0635, 0.0918, 0.92, 1.33]),
        (MeshFamily::Tetrahedral, 2, [0.0327, 0.0384, 0.0510, 1.17, 1.56]),
        (MeshFamily::Tetrahedral, 3, [0.0196, 0.0243, 0.0320, 1.24, 1.63]),
    ];
    rows.iter()
        .map(|&(family, p, r)| MulderRef {
            family,
            p,
            dt_eta: r[0],
            dt_star: r[1],
            dt_star2: r[2],
            ratio_star: r[3],
            ratio_star2: r[4],
        })
        .collect()
}

fn range_rows(name: &'static str, families: Vec<MeshFamily>, ranges: [[f64; 4]; 3]) -> Vec<RangeRef> {
    ranges
        .iter()
        .enumerate()
        .map(|(i, r)| RangeRef {
            name,
            families: families.clone(),
            p: i + 1,
            ratio1: (r[0], r[1]),
            ratio2: (r[2], r[3]),
        })
        .collect()
}

/// Reference rows of tables 4 (deformed meshes), 5 (piecewise linear
/// media) and 6 (electromagnetic and elastic media).
pub fn range_reference(table: usize) -> Result<Vec<RangeRef>> {
    use MeshFamily::*;
    let pl = [(1.0, 1.0), (5.0, 5.0), (10.0, 1.0), (1.0, 10.0), (10.0, 10.0)];
    let iso = [(1.0, 0.0), (0.0, 1.0), (10.0, 1.0), (100.0, 1.0)];
    let em = [1.0, 0.1, 0.01];
    let xs = [0.5, 0.7, 0.9];
    let rows = match table {
        4 => [
            range_rows(
                "triangular[x]",
                xs.iter().map(|&x| TriangularX(x)).collect(),
                [
                    [1.04, 1.06, 1.14, 1.20],
                    [1.05, 1.09, 1.18, 1.20],
                    [1.05, 1.09, 1.19, 1.21],
                ],
            ),
            range_rows(
                "rectangular[x]",
                xs.iter().map(|&x| Rectangular(x)).collect(),
                [
                    [1.00, 1.00, 1.00, 1.11],
                    [1.00, 1.00, 1.00, 1.28],
                    [1.00, 1.00, 1.00, 1.37],
                ],
            ),
            range_rows(
                "quadrilateral[x]",
                [0.5, 0.6, 0.7].iter().map(|&x| Quadrilateral(x)).collect(),
                [
                    [1.00, 1.05, 1.00, 1.20],
                    [1.00, 1.04, 1.00, 1.26],
                    [1.00, 1.05, 1.00, 1.31],
                ],
            ),
            range_rows(
                "tetrahedral[x]",
                xs.iter().map(|&x| TetrahedralX(x)).collect(),
                [
                    [1.06, 1.13, 1.12, 1.14],
                    [1.08, 1.17, 1.14, 1.17],
                    [1.07, 1.12, 1.14, 1.15],
                ],
            ),
            range_rows(
                "cuboid[x]",
                xs.iter().map(|&x| Cuboid(x)).collect(),
                [
                    [1.00, 1.00, 1.00, 1.11],
                    [1.00, 1.00, 1.00, 1.28],
                    [1.00, 1.00, 1.00, 1.37],
                ],
            ),
            range_rows(
                "hexahedral[x]",
                [0.5, 0.6, 0.65].iter().map(|&x| Hexahedral(x)).collect(),
                [
                    [1.00, 1.09, 1.00, 1.17],
                    [1.00, 1.07, 1.00, 1.25],
                    [1.00, 1.10, 1.00, 1.28],
                ],
            ),
        ]
        .concat(),
        5 => [
            range_rows(
                "triPL",
                pl.iter().map(|&(a, b)| TriPl(a, b)).collect(),
                [
                    [1.01, 1.09, 1.04, 1.17],
                    [1.01, 1.11, 1.06, 1.19],
                    [1.01, 1.09, 1.08, 1.20],
                ],
            ),
            range_rows(
                "squarePL",
                pl.iter().map(|&(a, b)| SquarePl(a, b)).collect(),
                [
                    [1.00, 1.00, 1.00, 1.00],
                    [1.00, 1.00, 1.00, 1.00],
                    [1.00, 1.00, 1.00, 1.04],
                ],
            ),
            range_rows(
                "tetrahedralPL",
                pl.iter().map(|&(a, b)| TetrahedralPl(a, b)).collect(),
                [
                    [1.12, 1.19, 1.13, 1.14],
                    [1.12, 1.19, 1.13, 1.15],
                    [1.10, 1.12, 1.14, 1.15],
                ],
            ),
            range_rows(
                "cubicPL",
                pl.iter().map(|&(a, b)| CubicPl(a, b)).collect(),
                [
                    [1.00, 1.00, 1.00, 1.00],
                    [1.00, 1.00, 1.00, 1.00],
                    [1.00, 1.00, 1.00, 1.03],
                ],
            ),
        ]
        .concat(),
        6 => [
            range_rows(
                "tetraEM",
                em.iter().map(|&m| TetraEm(1.0, m)).collect(),
                [
                    [1.04, 1.05, 1.14, 1.15],
                    [1.04, 1.07, 1.15, 1.15],
                    [1.00, 1.04, 1.15, 1.16],
                ],
            ),
            range_rows(
                "cubicEM",
                em.iter().map(|&m| CubicEm(1.0, m)).collect(),
                [
                    [1.00, 1.07, 1.29, 1.29],
                    [1.00, 1.00, 1.31, 1.35],
                    [1.00, 1.01, 1.33, 1.35],
                ],
            ),
            range_rows(
                "tetraISO",
                iso.iter().map(|&(l, m)| TetraIso(l, m)).collect(),
                [
                    [1.00, 1.11, 1.14, 1.15],
                    [1.00, 1.14, 1.14, 1.15],
                    [1.00, 1.13, 1.13, 1.15],
                ],
            ),
            range_rows(
                "cubicISO",
                iso.iter().map(|&(l, m)| CubicIso(l, m)).collect(),
                [
                    [1.05, 1.20, 1.24, 1.28],
                    [1.00, 1.10, 1.23, 1.31],
                    [1.00, 1.07, 1.24, 1.33],
                ],
            ),
        ]
        .concat(),
        _ => return Err(Error::invalid(format!("range tables are 4, 5 and 6, got {table}"))),
    };
    Ok(rows)
}

/// Recomputed range row.
#[derive(Debug, Clone, Serialize)]
pub struct RangeResult {
    pub name: &'static str,
    pub p: usize,
    pub rows: Vec<SharpnessRow>,
    pub ratio1: (f64, f64),
    pub ratio2: (f64, f64),
    pub expected1: (f64, f64),
    pub expected2: (f64, f64),
}

impl RangeResult {
    /// Every computed ratio lies in the reference interval widened by `slack`.
    pub fn within(&self, slack: f64) -> bool {
        let inside = |v: f64, r: (f64, f64)| v >= r.0 - slack && v <= r.1 + slack;
        self.rows
            .iter()
            .all(|r| inside(r.ratio1, self.expected1) && inside(r.ratio2, self.expected2))
    }
}

pub fn evaluate_range(row: &RangeRef, opts: &StabilityOptions) -> Result<RangeResult> {
    let rows = row
        .families
        .par_iter()
        .map(|&f| sharpness_ratios(f, row.p, Variant::Star2, opts))
        .collect::<Result<Vec<_>>>()?;
    let span = |g: fn(&SharpnessRow) -> f64| {
        rows.iter()
            .map(g)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    Ok(RangeResult {
        name: row.name,
        p: row.p,
        ratio1: span(|r| r.ratio1),
        ratio2: span(|r| r.ratio2),
        expected1: row.ratio1,
        expected2: row.ratio2,
        rows,
    })
}

/// Recomputed row of table 3.
#[derive(Debug, Clone, Serialize)]
pub struct MulderResult {
    pub mesh: String,
    pub p: usize,
    pub dt_eta: f64,
    pub dt_star: f64,
    pub dt_star2: f64,
    pub ratio_star: f64,
    pub ratio_star2: f64,
}

pub fn evaluate_mulder(family: MeshFamily, p: usize, opts: &StabilityOptions) -> Result<MulderResult> {
    let dt_eta = mulder_time_step(family, p, opts)?;
    let dt = |v| -> Result<f64> {
        let s = FamilyStudy::new(family, p, PenaltyChoice::Kappa(v), opts)?;
        Ok(time_step(opts.c_method, s.lambda(1.0)?))
    };
    let (dt_star, dt_star2) = (dt(Variant::Star)?, dt(Variant::Star2)?);
    Ok(MulderResult {
        mesh: family.to_string(),
        p,
        dt_eta,
        dt_star,
        dt_star2,
        ratio_star: dt_star / dt_eta,
        ratio_star2: dt_star2 / dt_eta,
    })
}

/// Restricts a table run to some degrees and mesh names. Empty lists keep
/// every row.
#[derive(Debug, Clone, Default)]
pub struct TableFilter {
    pub degrees: Vec<usize>,
    /// Case-insensitive prefixes of the mesh name.
    pub meshes: Vec<String>,
}

impl TableFilter {
    fn keeps(&self, name: &str, p: usize) -> bool {
        let name = name.to_ascii_lowercase();
        (self.degrees.is_empty() || self.degrees.contains(&p))
            && (self.meshes.is_empty() || self.meshes.iter().any(|m| name.starts_with(&m.to_ascii_lowercase())))
    }
}

/// Recomputed table in reference row order.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum TableOutput {
    Regular(Vec<SharpnessRow>),
    Mulder(Vec<MulderResult>),
    Range(Vec<RangeResult>),
}

pub fn compute_table(table: usize, filter: &TableFilter, opts: &StabilityOptions) -> Result<TableOutput> {
    match table {
        1 | 2 => {
            let variant = if table == 1 { Variant::Star } else { Variant::Star2 };
            let refs: Vec<_> = regular_reference(variant)
                .into_iter()
                .filter(|r| filter.keeps(&r.family.to_string(), r.p))
                .collect();
            let rows = refs
                .par_iter()
                .map(|r| sharpness_ratios(r.family, r.p, variant, opts))
                .collect::<Result<Vec<_>>>()?;
            Ok(TableOutput::Regular(rows))
        }
        3 => {
            let refs: Vec<_> = mulder_reference()
                .into_iter()
                .filter(|r| filter.keeps(&r.family.to_string(), r.p))
                .collect();
            let rows = refs
                .par_iter()
                .map(|r| evaluate_mulder(r.family, r.p, opts))
                .collect::<Result<Vec<_>>>()?;
            Ok(TableOutput::Mulder(rows))
        }
        4..=6 => {
            let rows = range_reference(table)?
                .iter()
                .filter(|r| filter.keeps(r.name, r.p))
                .map(|r| evaluate_range(r, opts))
                .collect::<Result<Vec<_>>>()?;
            Ok(TableOutput::Range(rows))
        }
        _ => Err(Error::invalid(format!("tables are numbered 1 to 6, got {table}"))),
    }
}

impl TableOutput {
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        match self {
            TableOutput::Regular(rows) => crate::stability::write_rows_csv(rows, out),
            TableOutput::Mulder(rows) => {
                writeln!(out, "mesh,p,dt_eta,dt_star,dt_star2,ratio_star,ratio_star2")?;
                for r in rows {
                    writeln!(
                        out,
                        "{},{},{:.4},{:.4},{:.4},{:.2},{:.2}",
                        r.mesh, r.p, r.dt_eta, r.dt_star, r.dt_star2, r.ratio_star, r.ratio_star2
                    )?;
                }
                Ok(())
            }
            TableOutput::Range(rows) => {
                writeln!(
                    out,
                    "mesh,p,ratio1_min,ratio1_max,ratio2_min,ratio2_max,expected_ratio1,expected_ratio2,within"
                )?;
                for r in rows {
                    writeln!(
                        out,
                        "{},{},{:.2},{:.2},{:.2},{:.2},[{:.2} {:.2}],[{:.2} {:.2}],{}",
                        r.name,
                        r.p,
                        r.ratio1.0,
                        r.ratio1.1,
                        r.ratio2.0,
                        r.ratio2.1,
                        r.expected1.0,
                        r.expected1.1,
                        r.expected2.0,
                        r.expected2.1,
                        r.within(RATIO_TOL)
                    )?;
                }
                Ok(())
            }
        }
    }
}

/// Recomputes a whole table and writes it as CSV.
pub fn write_table(table: usize, opts: &StabilityOptions, out: &mut impl Write) -> Result<()> {
    compute_table(table, &TableFilter::default(), opts)?.write_csv(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_tables_are_complete() {
        assert_eq!(regular_reference(Variant::Star).len(), 15);
        assert_eq!(regular_reference(Variant::Star2)[3].dt_eta, 0.4082);
        assert_eq!(mulder_reference().len(), 6);
        let n: usize = (4..=6).map(|t| range_reference(t).unwrap().len()).sum();
        assert_eq!(n, 6 * 3 + 4 * 3 + 4 * 3);
        assert!(range_reference(7).is_err());
    }

    #[test]
    fn filter_selects_rows() {
        let f = TableFilter {
            degrees: vec![1],
            meshes: vec!["Square".into()],
        };
        assert!(f.keeps("squarePL", 1) && f.keeps("square", 1));
        assert!(!f.keeps("square", 2) && !f.keeps("cubic", 1));
        assert!(TableFilter::default().keeps("anything", 9));
        let out = compute_table(
            2,
            &TableFilter {
                degrees: vec![1],
                meshes: vec!["1D".into()],
            },
            &StabilityOptions::default(),
        )
        .unwrap();
        let TableOutput::Regular(rows) = out else { panic!() };
        assert_eq!(rows.len(), 1);
        assert!((rows[0].dt_eta - 0.5774).abs() < 5e-4);
        assert!(compute_table(0, &TableFilter::default(), &StabilityOptions::default()).is_err());
    }

    #[test]
    fn reference_ratios_are_consistent_with_time_steps() {
        for v in [Variant::Star, Variant::Star2] {
            for r in regular_reference(v) {
                assert!(
                    (r.dt_eta_min / r.dt_eta - r.ratio1).abs() < 0.011,
                    "{:?} p={}",
                    r.family,
                    r.p
                );
            }
        }
    }
}
