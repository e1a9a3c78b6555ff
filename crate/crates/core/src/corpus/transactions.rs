//! Delimited transaction logs.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{CorpusError, RowRejection};

/// One scanner-panel line item.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub household_id: String,
    pub week: i64,
    pub store_id: String,
    pub chain_id: String,
    pub product_id: String,
    pub category: String,
    pub price: f64,
    pub quantity: u32,
    pub feature: bool,
    pub display: bool,
}

/// Maps each transaction field onto a header name in the input file.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub delimiter: u8,
    pub household_id: String,
    pub week: String,
    pub store_id: String,
    pub chain_id: String,
    pub product_id: String,
    pub category: String,
    pub price: String,
    pub quantity: String,
    pub feature: String,
    pub display: String,
}

pub const CANONICAL_COLUMNS: [&str; 10] = [
    "household_id",
    "week",
    "store_id",
    "chain_id",
    "product_id",
    "category",
    "price",
    "quantity",
    "feature",
    "display",
];

impl Default for Schema {
    fn default() -> Self {
        let c = CANONICAL_COLUMNS;
        Schema {
            delimiter: b',',
            household_id: c[0].into(),
            week: c[1].into(),
            store_id: c[2].into(),
            chain_id: c[3].into(),
            product_id: c[4].into(),
            category: c[5].into(),
            price: c[6].into(),
            quantity: c[7].into(),
            feature: c[8].into(),
            display: c[9].into(),
        }
    }
}

impl Schema {
    fn columns(&self) -> [&str; 10] {
        [
            &self.household_id,
            &self.week,
            &self.store_id,
            &self.chain_id,
            &self.product_id,
            &self.category,
            &self.price,
            &self.quantity,
            &self.feature,
            &self.display,
        ]
    }

    /// Overrides the column for a canonical field name. Returns false when
    /// `field` is not one of [`CANONICAL_COLUMNS`].
    pub fn set_column(&mut self, field: &str, column: &str) -> bool {
        let slot = match field {
            "household_id" => &mut self.household_id,
            "week" => &mut self.week,
            "store_id" => &mut self.store_id,
            "chain_id" => &mut self.chain_id,
            "product_id" => &mut self.product_id,
            "category" => &mut self.category,
            "price" => &mut self.price,
            "quantity" => &mut self.quantity,
            "feature" => &mut self.feature,
            "display" => &mut self.display,
            _ => return false,
        };
        *slot = column.to_string();
        true
    }
}

fn parse_flag(raw: &str) -> Option<bool> {
    match raw.trim() {
        "1" | "true" | "TRUE" | "True" | "yes" | "y" | "Y" => Some(true),
        "0" | "false" | "FALSE" | "False" | "no" | "n" | "N" | "" => Some(false),
        _ => None,
    }
}

/// Reads a delimited transaction file with a header row.
///
/// Malformed numeric fields abort with the offending row and column. Rows
/// that parse but violate the domain invariants (non-positive price, zero
/// quantity, empty identifier) are collected and reported together.
pub fn load_transactions(path: &Path, schema: &Schema) -> Result<Vec<Transaction>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let mut positions = [0usize; 10];
    for (slot, column) in positions.iter_mut().zip(schema.columns()) {
        *slot = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| CorpusError::UnmappedColumn {
                column: column.to_string(),
            })?;
    }
    let names = schema.columns();

    let mut out = Vec::new();
    let mut rejected = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let field = |k: usize| record.get(positions[k]).unwrap_or("");
        let bad = |k: usize, message: String| CorpusError::BadField {
            row,
            column: names[k].to_string(),
            message,
        };

        let week: i64 = field(1)
            .parse()
            .map_err(|e| bad(1, format!("`{}`: {e}", field(1))))?;
        let price: f64 = field(6)
            .parse()
            .map_err(|e| bad(6, format!("`{}`: {e}", field(6))))?;
        let quantity: i64 = field(7)
            .parse()
            .map_err(|e| bad(7, format!("`{}`: {e}", field(7))))?;
        let feature = parse_flag(field(8)).ok_or_else(|| bad(8, format!("`{}` is not a flag", field(8))))?;
        let display = parse_flag(field(9)).ok_or_else(|| bad(9, format!("`{}` is not a flag", field(9))))?;

        if let Some(k) = [0, 2, 3, 4, 5].into_iter().find(|&k| field(k).is_empty()) {
            rejected.push(RowRejection {
                row,
                reason: format!("missing {}", names[k]),
            });
            continue;
        }
        if !(price > 0.0) || !price.is_finite() {
            rejected.push(RowRejection {
                row,
                reason: format!("non-positive price {}", field(6)),
            });
            continue;
        }
        if quantity < 1 {
            rejected.push(RowRejection {
                row,
                reason: format!("quantity {quantity} < 1"),
            });
            continue;
        }

        out.push(Transaction {
            household_id: field(0).to_string(),
            week,
            store_id: field(2).to_string(),
            chain_id: field(3).to_string(),
            product_id: field(4).to_string(),
            category: field(5).to_string(),
            price,
            quantity: quantity as u32,
            feature,
            display,
        });
    }
    if !rejected.is_empty() {
        return Err(CorpusError::RejectedRows(rejected));
    }
    Ok(out)
}

/// Writes transactions in the canonical column order, comma-delimited.
pub fn write_transactions(path: &Path, transactions: &[Transaction]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(file);
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    writeln!(w, "{}", CANONICAL_COLUMNS.join(",")).map_err(io)?;
    for t in transactions {
        // `{}` on f64 prints the shortest representation that round-trips.
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            t.household_id,
            t.week,
            t.store_id,
            t.chain_id,
            t.product_id,
            t.category,
            t.price,
            t.quantity,
            u8::from(t.feature),
            u8::from(t.display)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const CANONICAL: &str = "household_id,week,store_id,chain_id,product_id,category,price,quantity,feature,display
h1,1,s1,c1,p1,milk,2.49,1,0,0
h1,1,s1,c1,p2,cereal,3.99,2,1,0
h2,2,s2,c1,p1,milk,2.59,1,0,1
";

    #[test]
    fn three_rows_three_transactions() {
        let f = write(CANONICAL);
        let tx = load_transactions(f.path(), &Schema::default()).unwrap();
        assert_eq!(tx.len(), 3);
        assert_eq!(tx[1].product_id, "p2");
        assert_eq!(tx[1].quantity, 2);
        assert!(tx[1].feature);
        assert!(tx[2].display);
        assert_eq!(tx[2].price, 2.59);
    }

    #[test]
    fn zero_price_is_rejected_with_row_number() {
        let f = write(
            "household_id,week,store_id,chain_id,product_id,category,price,quantity,feature,display
h1,1,s1,c1,p1,milk,0.00,1,0,0
",
        );
        match load_transactions(f.path(), &Schema::default()) {
            Err(CorpusError::RejectedRows(rows)) => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].row, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shuffled_columns_with_mapping_match_canonical() {
        let canonical = write(CANONICAL);
        let expected = load_transactions(canonical.path(), &Schema::default()).unwrap();

        // Reorder and rename columns, then point a schema at the new names.
        let shuffled = write(
            "PRICE;hh;prod;wk;disp;cat;qty;store;feat;chain
2.49;h1;p1;1;0;milk;1;s1;0;c1
3.99;h1;p2;1;0;cereal;2;s1;1;c1
2.59;h2;p1;2;1;milk;1;s2;0;c1
",
        );
        let mut schema = Schema {
            delimiter: b';',
            ..Schema::default()
        };
        for (field, col) in [
            ("price", "PRICE"),
            ("household_id", "hh"),
            ("product_id", "prod"),
            ("week", "wk"),
            ("display", "disp"),
            ("category", "cat"),
            ("quantity", "qty"),
            ("store_id", "store"),
            ("feature", "feat"),
            ("chain_id", "chain"),
        ] {
            assert!(schema.set_column(field, col));
        }
        let got = load_transactions(shuffled.path(), &schema).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn missing_file_and_unmapped_column() {
        let err = load_transactions(Path::new("/nonexistent/tx.csv"), &Schema::default()).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));

        let f = write("household_id,week\nh1,1\n");
        let err = load_transactions(f.path(), &Schema::default()).unwrap_err();
        assert!(matches!(err, CorpusError::UnmappedColumn { column } if column == "store_id"));
    }

    #[test]
    fn malformed_numeric_reports_row_and_column() {
        let f = write(
            "household_id,week,store_id,chain_id,product_id,category,price,quantity,feature,display
h1,1,s1,c1,p1,milk,2.0,1,0,0
h1,x,s1,c1,p1,milk,2.0,1,0,0
",
        );
        let err = load_transactions(f.path(), &Schema::default()).unwrap_err();
        match err {
            CorpusError::BadField { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "week");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_load_is_identity() {
        let f = write(CANONICAL);
        let tx = load_transactions(f.path(), &Schema::default()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_transactions(out.path(), &tx).unwrap();
        assert_eq!(load_transactions(out.path(), &Schema::default()).unwrap(), tx);
    }
}
