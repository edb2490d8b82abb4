//! Relation signatures, database instances, blocks and repairs.
//!
//! An instance is a set of facts; facts of one relation that agree on the
//! primary key form a block, and a repair keeps exactly one fact per block.
//! Blocks and their members are kept in canonical (lexicographic) order so
//! that repair number `i` denotes the same fact set on every run.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, Signed, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{format_rational, parse_rational, Value};

/// Signature `(arity, key_len, numeric positions)` of one relation name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub name: String,
    pub arity: usize,
    pub key_len: usize,
    /// 1-based positions holding rationals.
    #[serde(default)]
    pub numeric_positions: BTreeSet<usize>,
}

impl Signature {
    pub fn new(name: &str, arity: usize, key_len: usize, numeric: &[usize]) -> Result<Self> {
        let sig = Signature {
            name: name.to_string(),
            arity,
            key_len,
            numeric_positions: numeric.iter().copied().collect(),
        };
        sig.validate()?;
        Ok(sig)
    }

    fn validate(&self) -> Result<()> {
        let ok_name = self
            .name
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic())
            && self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !ok_name {
            return Err(Error::Schema(format!("bad relation name `{}`", self.name)));
        }
        if self.arity == 0 {
            return Err(Error::Schema(format!("{}: arity must be positive", self.name)));
        }
        if self.key_len == 0 || self.key_len > self.arity {
            return Err(Error::Schema(format!(
                "{}: key_len {} outside 1..={}",
                self.name, self.key_len, self.arity
            )));
        }
        if let Some(p) = self
            .numeric_positions
            .iter()
            .find(|&&p| p == 0 || p > self.arity)
        {
            return Err(Error::Schema(format!(
                "{}: numeric position {p} outside 1..={}",
                self.name, self.arity
            )));
        }
        Ok(())
    }

    pub fn is_full_key(&self) -> bool {
        self.key_len == self.arity
    }

    /// `index` is 0-based.
    pub fn is_numeric(&self, index: usize) -> bool {
        self.numeric_positions.contains(&(index + 1))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Schema {
    relations: BTreeMap<String, Arc<Signature>>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    relations: Vec<Signature>,
}

impl Schema {
    pub fn new(signatures: impl IntoIterator<Item = Signature>) -> Result<Self> {
        let mut relations = BTreeMap::new();
        for sig in signatures {
            sig.validate()?;
            let name = sig.name.clone();
            if relations.insert(name.clone(), Arc::new(sig)).is_some() {
                return Err(Error::Schema(format!("duplicate relation `{name}`")));
            }
        }
        Ok(Schema { relations })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemaFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Schema::new(file.relations)
    }

    pub fn to_json(&self) -> String {
        let file = SchemaFile {
            relations: self.relations.values().map(|s| (**s).clone()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Signature>> {
        self.relations.get(name)
    }

    pub fn relation(&self, name: &str) -> Result<&Arc<Signature>> {
        self.get(name)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn signatures(&self) -> impl Iterator<Item = &Arc<Signature>> {
        self.relations.values()
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }
}

pub fn load_schema(path: &Path) -> Result<Schema> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Schema::from_json(&text)
}

/// Whether numeric columns may hold negative rationals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NumericDomain {
    #[default]
    NonNegative,
    Unconstrained,
}

pub type Tuple = Vec<Value>;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub relation: Arc<str>,
    pub values: Tuple,
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.relation)?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug)]
pub struct DatabaseInstance {
    schema: Arc<Schema>,
    domain: NumericDomain,
    tables: BTreeMap<String, BTreeSet<Tuple>>,
}

impl PartialEq for DatabaseInstance {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.domain == other.domain && self.tables == other.tables
    }
}

impl DatabaseInstance {
    pub fn new(schema: Arc<Schema>, domain: NumericDomain) -> Self {
        let tables = schema
            .signatures()
            .map(|s| (s.name.clone(), BTreeSet::new()))
            .collect();
        DatabaseInstance {
            schema,
            domain,
            tables,
        }
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn domain(&self) -> NumericDomain {
        self.domain
    }

    /// Type-checks and adds a fact; returns `false` if it was already present.
    pub fn insert(&mut self, relation: &str, values: Tuple) -> Result<bool> {
        let sig = self.schema.relation(relation)?.clone();
        if values.len() != sig.arity {
            return Err(Error::Instance(format!(
                "{relation}: expected {} values, got {}",
                sig.arity,
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            match (sig.is_numeric(i), v) {
                (true, Value::Num(r)) => {
                    if self.domain == NumericDomain::NonNegative && r.is_negative() {
                        return Err(Error::Instance(format!(
                            "{relation}: negative value {} at numeric position {} \
                             (numeric columns are non-negative unless negatives are allowed)",
                            format_rational(r),
                            i + 1
                        )));
                    }
                }
                (true, Value::Str(s)) => {
                    return Err(Error::Instance(format!(
                        "{relation}: `{s}` at numeric position {} is not a rational",
                        i + 1
                    )))
                }
                (false, Value::Num(_)) => {
                    return Err(Error::Instance(format!(
                        "{relation}: number at non-numeric position {}",
                        i + 1
                    )))
                }
                (false, Value::Str(_)) => {}
            }
        }
        Ok(self
            .tables
            .get_mut(relation)
            .expect("every schema relation has a table")
            .insert(values))
    }

    /// Parses one textual row against the relation's signature.
    pub fn insert_text(&mut self, relation: &str, cells: &[&str]) -> Result<bool> {
        let sig = self.schema.relation(relation)?.clone();
        if cells.len() != sig.arity {
            return Err(Error::Instance(format!(
                "{relation}: expected {} columns, got {}",
                sig.arity,
                cells.len()
            )));
        }
        let values = cells
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                if sig.is_numeric(i) {
                    parse_rational(cell).map(Value::Num).ok_or_else(|| {
                        Error::Instance(format!(
                            "{relation}: `{cell}` in numeric column {} is not a rational",
                            i + 1
                        ))
                    })
                } else {
                    Ok(Value::str(cell))
                }
            })
            .collect::<Result<Tuple>>()?;
        self.insert(relation, values)
    }

    pub fn tuples(&self, relation: &str) -> Result<&BTreeSet<Tuple>> {
        self.tables
            .get(relation)
            .ok_or_else(|| Error::UnknownRelation(relation.to_string()))
    }

    pub fn contains(&self, relation: &str, values: &[Value]) -> bool {
        self.tables
            .get(relation)
            .is_some_and(|t| t.contains(values))
    }

    pub fn facts(&self) -> impl Iterator<Item = Fact> + '_ {
        self.tables.iter().flat_map(|(name, tuples)| {
            let rel: Arc<str> = Arc::from(name.as_str());
            tuples.iter().map(move |t| Fact {
                relation: rel.clone(),
                values: t.clone(),
            })
        })
    }

    pub fn len(&self) -> usize {
        self.tables.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn active_domain(&self) -> BTreeSet<Value> {
        self.tables
            .values()
            .flat_map(|t| t.iter().flatten().cloned())
            .collect()
    }

    pub fn is_consistent(&self) -> bool {
        self.all_blocks().iter().all(|b| b.members.len() == 1)
    }

    /// A copy without the given facts.
    pub fn without(&self, removed: &HashSet<Fact>) -> DatabaseInstance {
        let mut out = DatabaseInstance::new(self.schema.clone(), self.domain);
        for fact in self.facts().filter(|f| !removed.contains(f)) {
            out.tables
                .get_mut(&*fact.relation)
                .expect("same schema")
                .insert(fact.values);
        }
        out
    }

    /// The blocks of one relation, sorted by key.
    pub fn blocks(&self, relation: &str) -> Result<Vec<Block>> {
        let sig = self.schema.relation(relation)?;
        let tuples = self.tuples(relation)?;
        let rel: Arc<str> = Arc::from(relation);
        let mut blocks: Vec<Block> = Vec::new();
        // tuples are sorted, so key-equal tuples are adjacent
        for t in tuples {
            let key = &t[..sig.key_len];
            match blocks.last_mut() {
                Some(b) if b.key.as_slice() == key => b.members.push(t.clone()),
                _ => blocks.push(Block {
                    relation: rel.clone(),
                    key: key.to_vec(),
                    members: vec![t.clone()],
                }),
            }
        }
        Ok(blocks)
    }

    /// Blocks of every relation, relations in name order.
    pub fn all_blocks(&self) -> Vec<Block> {
        self.tables
            .keys()
            .flat_map(|name| self.blocks(name).expect("relation exists"))
            .collect()
    }

    pub fn repair_count(&self) -> BigUint {
        self.all_blocks()
            .iter()
            .map(|b| BigUint::from(b.members.len()))
            .fold(BigUint::one(), |acc, n| acc * n)
    }

    pub fn repair_space(&self) -> RepairSpace {
        RepairSpace {
            template: DatabaseInstance::new(self.schema.clone(), self.domain),
            blocks: self.all_blocks(),
        }
    }
}

/// A maximal set of facts of one relation sharing the key value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub relation: Arc<str>,
    pub key: Tuple,
    pub members: Vec<Tuple>,
}

/// One member index per block of a [`RepairSpace`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Repair {
    pub selection: Vec<usize>,
}

/// The blocks of an instance, used to enumerate and materialize repairs.
#[derive(Clone, Debug)]
pub struct RepairSpace {
    template: DatabaseInstance,
    blocks: Vec<Block>,
}

impl RepairSpace {
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn count(&self) -> BigUint {
        self.blocks
            .iter()
            .map(|b| BigUint::from(b.members.len()))
            .fold(BigUint::one(), |acc, n| acc * n)
    }

    /// Count as `u64`, or the cap error.
    pub fn checked_count(&self, cap: u64) -> Result<u64> {
        let count = self.count();
        match count.to_u64() {
            Some(n) if n <= cap => Ok(n),
            _ => Err(Error::CapExceeded { count, cap }),
        }
    }

    /// Mixed-radix decoding of `index`; the last block varies fastest.
    pub fn repair_at(&self, mut index: u64) -> Repair {
        let mut selection = vec![0; self.blocks.len()];
        for (slot, block) in selection.iter_mut().zip(&self.blocks).rev() {
            let size = block.members.len() as u64;
            *slot = (index % size) as usize;
            index /= size;
        }
        Repair { selection }
    }

    pub fn iter(&self, cap: u64) -> Result<impl Iterator<Item = Repair> + '_> {
        let n = self.checked_count(cap)?;
        Ok((0..n).map(move |i| self.repair_at(i)))
    }

    pub fn facts<'a>(&'a self, repair: &'a Repair) -> impl Iterator<Item = Fact> + 'a {
        self.blocks
            .iter()
            .zip(&repair.selection)
            .map(|(b, &i)| Fact {
                relation: b.relation.clone(),
                values: b.members[i].clone(),
            })
    }

    pub fn instance(&self, repair: &Repair) -> DatabaseInstance {
        let mut db = self.template.clone();
        for (block, &i) in self.blocks.iter().zip(&repair.selection) {
            db.tables
                .get_mut(&*block.relation)
                .expect("same schema")
                .insert(block.members[i].clone());
        }
        db
    }
}

pub fn blocks(db: &DatabaseInstance, relation: &str) -> Result<Vec<Block>> {
    db.blocks(relation)
}

pub fn repair_count(db: &DatabaseInstance) -> BigUint {
    db.repair_count()
}

/// Every repair exactly once, or [`Error::CapExceeded`].
pub fn enumerate_repairs(db: &DatabaseInstance, cap: u64) -> Result<Vec<Repair>> {
    let space = db.repair_space();
    let repairs = space.iter(cap)?.collect();
    Ok(repairs)
}

/// Reads `<Relation>.csv` files (no header) from `dir`.
///
/// Relations without a file are empty. Duplicate rows collapse with a
/// single warning per relation.
pub fn load_instance(
    schema: Arc<Schema>,
    dir: &Path,
    domain: NumericDomain,
) -> Result<DatabaseInstance> {
    let mut db = DatabaseInstance::new(schema.clone(), domain);
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if schema.get(&stem).is_none() {
            return Err(Error::UnknownRelation(stem));
        }
    }
    for sig in schema.signatures() {
        let path = dir.join(format!("{}.csv", sig.name));
        if !path.exists() {
            log::debug!("{}: no file, relation is empty", path.display());
            continue;
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(&path)
            .map_err(|e| Error::Instance(format!("{}: {e}", path.display())))?;
        let mut duplicates = 0usize;
        for (line, record) in reader.records().enumerate() {
            let record =
                record.map_err(|e| Error::Instance(format!("{}: {e}", path.display())))?;
            if record.len() == 1 && record.get(0) == Some("") {
                continue;
            }
            let cells: Vec<&str> = record.iter().collect();
            let added = db.insert_text(&sig.name, &cells).map_err(|e| match e {
                Error::Instance(msg) => {
                    Error::Instance(format!("{} row {}: {msg}", path.display(), line + 1))
                }
                other => other,
            })?;
            if !added {
                duplicates += 1;
            }
        }
        if duplicates > 0 {
            log::warn!(
                "{}: {duplicates} duplicate row(s) ignored",
                path.display()
            );
        }
    }
    Ok(db)
}

/// Writes the instance in the format read by [`load_instance`].
pub fn write_instance(db: &DatabaseInstance, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, tuples) in &db.tables {
        let path = dir.join(format!("{name}.csv"));
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|e| Error::Instance(format!("{}: {e}", path.display())))?;
        for t in tuples {
            let row: Vec<String> = t.iter().map(Value::to_string).collect();
            writer
                .write_record(&row)
                .map_err(|e| Error::Instance(format!("{}: {e}", path.display())))?;
        }
        writer.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn write_schema(schema: &Schema, path: &Path) -> Result<()> {
    fs::write(path, schema.to_json()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::int;

    fn stock_schema() -> Arc<Schema> {
        Arc::new(
            Schema::from_json(
                r#"{"relations":[
                    {"name":"Dealers","arity":2,"key_len":1,"numeric_positions":[]},
                    {"name":"Stock","arity":3,"key_len":2,"numeric_positions":[3]}]}"#,
            )
            .unwrap(),
        )
    }

    fn stock_db() -> DatabaseInstance {
        let mut db = DatabaseInstance::new(stock_schema(), NumericDomain::NonNegative);
        for row in [["Smith", "Boston"], ["Smith", "New York"], ["James", "Boston"]] {
            db.insert_text("Dealers", &row).unwrap();
        }
        for row in [
            ["Tesla X", "Boston", "35"],
            ["Tesla X", "Boston", "40"],
            ["Tesla Y", "Boston", "35"],
            ["Tesla Y", "New York", "95"],
            ["Tesla Y", "New York", "96"],
        ] {
            db.insert_text("Stock", &row).unwrap();
        }
        db
    }

    #[test]
    fn stock_signature() {
        let s = stock_schema();
        let stock = s.relation("Stock").unwrap();
        assert_eq!((stock.arity, stock.key_len), (3, 2));
        assert!(stock.is_numeric(2) && !stock.is_numeric(0));
        assert!(!stock.is_full_key());
    }

    #[test]
    fn full_key_accepted_and_zero_key_rejected() {
        let full = Signature::new("R", 2, 2, &[]).unwrap();
        assert!(full.is_full_key());
        assert!(matches!(Signature::new("R", 2, 0, &[]), Err(Error::Schema(_))));
        assert!(matches!(Signature::new("R", 2, 3, &[]), Err(Error::Schema(_))));
        assert!(matches!(Signature::new("R", 2, 1, &[3]), Err(Error::Schema(_))));
    }

    #[test]
    fn duplicate_relation_rejected() {
        let err = Schema::from_json(
            r#"{"relations":[{"name":"R","arity":1,"key_len":1},{"name":"R","arity":2,"key_len":1}]}"#,
        );
        assert!(matches!(err, Err(Error::Schema(m)) if m.contains("duplicate")));
        assert!(Schema::from_json("{not json").is_err());
    }

    #[test]
    fn stock_blocks() {
        let db = stock_db();
        assert_eq!(db.tuples("Dealers").unwrap().len(), 3);
        assert_eq!(db.tuples("Stock").unwrap().len(), 5);
        let dealers = db.blocks("Dealers").unwrap();
        // James sorts before Smith
        let sizes: Vec<_> = dealers.iter().map(|b| (b.key[0].to_string(), b.members.len())).collect();
        assert_eq!(sizes, vec![("James".into(), 1), ("Smith".into(), 2)]);
        let stock: Vec<_> = db.blocks("Stock").unwrap().iter().map(|b| b.members.len()).collect();
        assert_eq!(stock, vec![2, 1, 2]);
        assert!(matches!(db.blocks("Nope"), Err(Error::UnknownRelation(_))));
    }

    #[test]
    fn repair_counts() {
        let db = stock_db();
        assert_eq!(db.repair_count(), BigUint::from(8u32));
        let repairs = enumerate_repairs(&db, 100).unwrap();
        assert_eq!(repairs.len(), 8);
        let distinct: BTreeSet<_> = repairs.iter().collect();
        assert_eq!(distinct.len(), 8);
        let space = db.repair_space();
        for r in &repairs {
            let inst = space.instance(r);
            assert!(inst.is_consistent());
            assert_eq!(inst.len(), 5);
        }
        assert!(matches!(enumerate_repairs(&db, 7), Err(Error::CapExceeded { .. })));

        let empty = DatabaseInstance::new(stock_schema(), NumericDomain::NonNegative);
        assert_eq!(empty.repair_count(), BigUint::one());
        assert!(empty.is_consistent());
        let only = enumerate_repairs(&empty, 1).unwrap();
        assert_eq!(only.len(), 1);
        assert_eq!(empty.repair_space().instance(&only[0]), empty);
    }

    #[test]
    fn single_block_of_three() {
        let schema = Arc::new(Schema::new([Signature::new("R", 2, 1, &[2]).unwrap()]).unwrap());
        let mut db = DatabaseInstance::new(schema, NumericDomain::NonNegative);
        for v in 1..=3 {
            db.insert("R", vec![Value::str("a"), Value::int(v)]).unwrap();
        }
        assert_eq!(db.repair_count(), BigUint::from(3u32));
    }

    #[test]
    fn consistent_instance_has_itself_as_only_repair() {
        let mut db = DatabaseInstance::new(stock_schema(), NumericDomain::NonNegative);
        db.insert_text("Dealers", &["Smith", "Boston"]).unwrap();
        db.insert_text("Stock", &["Tesla Y", "Boston", "35"]).unwrap();
        let repairs = enumerate_repairs(&db, 10).unwrap();
        assert_eq!(repairs.len(), 1);
        assert_eq!(db.repair_space().instance(&repairs[0]), db);
        assert!(db.blocks("Stock").unwrap().iter().all(|b| b.members.len() == 1));
    }

    #[test]
    fn negative_values_depend_on_domain() {
        let mut db = DatabaseInstance::new(stock_schema(), NumericDomain::NonNegative);
        assert!(matches!(
            db.insert_text("Stock", &["Tesla", "Boston", "-1"]),
            Err(Error::Instance(_))
        ));
        let mut db = DatabaseInstance::new(stock_schema(), NumericDomain::Unconstrained);
        assert!(db.insert_text("Stock", &["Tesla", "Boston", "-1"]).unwrap());
        assert!(db.contains("Stock", &[Value::str("Tesla"), Value::str("Boston"), Value::int(-1)]));
        assert!(matches!(
            db.insert_text("Stock", &["Tesla", "Boston", "many"]),
            Err(Error::Instance(_))
        ));
        assert!(matches!(
            db.insert_text("Stock", &["Tesla", "Boston"]),
            Err(Error::Instance(_))
        ));
        assert!(!db.insert("Stock", vec![Value::str("Tesla"), Value::str("Boston"), Value::Num(int(-1))]).unwrap());
    }
}
