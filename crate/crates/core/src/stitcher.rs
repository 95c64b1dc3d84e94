//! Reassembles a package of shredded results into one nested value.
//!
//! Each result is grouped once by outer index; descending the package then
//! looks up each inner-index value and splices the matching rows in, so
//! every row is touched a constant number of times. Inner indexes that
//! match no rows denote legitimately empty bags. Index values are only ever
//! compared for equality, never inspected.

use std::collections::HashMap;

use crate::ast::*;
use crate::error::{Error, Result};

/// Row-visit accounting, used to assert the single-pass property.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StitchStats {
    pub rows_total: usize,
    pub rows_visited: usize,
}

struct Grouped<'a> {
    by_outer: HashMap<&'a Index, Vec<&'a ShreddedRow>>,
}

impl<'a> Grouped<'a> {
    fn new(result: &'a ShreddedResult) -> Grouped<'a> {
        let mut by_outer: HashMap<&'a Index, Vec<&'a ShreddedRow>> = HashMap::new();
        for row in &result.rows {
            by_outer.entry(&row.outer).or_default().push(row);
        }
        Grouped { by_outer }
    }
}

/// Stitches a package of evaluated shredded results back into a nested
/// value, starting from the scheme's root index. Row annotations survive
/// onto the stitched bag elements.
pub fn stitch(pkg: &Package<ShreddedResult>, root: &Index) -> Result<(Value, StitchStats)> {
    let grouped = pkg.pmap(&mut |r| Grouped::new(r));
    let mut stats = StitchStats {
        rows_total: pkg.annotations().iter().map(|r| r.rows.len()).sum(),
        rows_visited: 0,
    };
    let value = build(&Value::Idx(root.clone()), &grouped, &mut stats)?;
    Ok((value, stats))
}

fn build(w: &Value, pkg: &Package<Grouped<'_>>, stats: &mut StitchStats) -> Result<Value> {
    match pkg {
        Package::Base(_) => match w {
            Value::Const(_) => Ok(w.clone()),
            other => Err(Error::TypeMismatch(format!(
                "expected constant, got {other:?}"
            ))),
        },
        Package::Record(fields) => Ok(Value::Record(
            fields
                .iter()
                .map(|(l, sub)| {
                    let inner = w.field(l).ok_or_else(|| {
                        Error::TypeMismatch(format!("stitched row missing field {l}"))
                    })?;
                    Ok((l.clone(), build(inner, sub, stats)?))
                })
                .collect::<Result<_>>()?,
        )),
        Package::Bag(child, grouped) => {
            let key = match w {
                Value::Idx(ix) => ix,
                other => {
                    return Err(Error::TypeMismatch(format!(
                        "expected index at bag position, got {other:?}"
                    )))
                }
            };
            let rows = grouped
                .by_outer
                .get(key)
                .map(|v| v.as_slice())
                .unwrap_or(&[]);
            let mut items = Vec::with_capacity(rows.len());
            for row in rows {
                stats.rows_visited += 1;
                items.push((build(&row.payload, child, stats)?, row.annotation.clone()));
            }
            Ok(Value::Bag(items))
        }
    }
}
