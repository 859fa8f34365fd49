//! Values, atom universes, and variable domains.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use super::KernelError;

/// Largest universe an [`AtomSet`] can address.
pub const MAX_ATOMS: usize = 64;

/// An atom, identified by its position in the owning [`Universe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom(pub u8);

impl Atom {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Finite subset of a universe, stored as a bitmask over atom indices.
///
/// Ordering is the canonical one used for tie-breaking: sets are compared
/// position by position through the universe, and at the first position where
/// they differ the set containing that atom sorts first. The full universe is
/// therefore the least set and `∅` the greatest.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct AtomSet(u64);

impl AtomSet {
    pub const EMPTY: AtomSet = AtomSet(0);

    pub fn from_bits(bits: u64) -> Self {
        AtomSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn full(size: usize) -> Self {
        if size >= 64 {
            AtomSet(u64::MAX)
        } else {
            AtomSet((1u64 << size) - 1)
        }
    }

    pub fn singleton(atom: Atom) -> Self {
        AtomSet(1u64 << atom.0)
    }

    pub fn contains(self, atom: Atom) -> bool {
        self.0 & (1u64 << atom.0) != 0
    }

    pub fn insert(&mut self, atom: Atom) {
        self.0 |= 1u64 << atom.0;
    }

    pub fn union(self, other: Self) -> Self {
        AtomSet(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        AtomSet(self.0 & other.0)
    }

    pub fn difference(self, other: Self) -> Self {
        AtomSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> u64 {
        u64::from(self.0.count_ones())
    }

    /// Members in universe order.
    pub fn iter(self) -> impl Iterator<Item = Atom> {
        (0..64u8)
            .filter(move |i| self.0 & (1u64 << i) != 0)
            .map(Atom)
    }

    /// Every subset of a universe of `size` atoms, in canonical order.
    pub fn all_subsets(size: usize) -> Vec<AtomSet> {
        assert!(size < 32, "powerset of {size} atoms is not enumerable");
        let mut subsets: Vec<AtomSet> = (0..1u64 << size).map(AtomSet).collect();
        subsets.sort();
        subsets
    }
}

impl Ord for AtomSet {
    fn cmp(&self, other: &Self) -> Ordering {
        // Bit 0 becomes the most significant bit; more members up front wins.
        other.0.reverse_bits().cmp(&self.0.reverse_bits())
    }
}

impl PartialOrd for AtomSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for AtomSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|a| a.0)).finish()
    }
}

/// The declared finite set of atom names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Universe {
    atoms: Vec<String>,
    index: HashMap<String, Atom>,
}

impl Universe {
    pub fn new<I, S>(names: I) -> Result<Self, KernelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let atoms: Vec<String> = names.into_iter().map(Into::into).collect();
        if atoms.len() > MAX_ATOMS {
            return Err(KernelError::UniverseTooLarge(atoms.len()));
        }
        let mut index = HashMap::with_capacity(atoms.len());
        for (i, name) in atoms.iter().enumerate() {
            if !is_identifier(name) {
                return Err(KernelError::BadIdentifier(name.clone()));
            }
            if index.insert(name.clone(), Atom(i as u8)).is_some() {
                return Err(KernelError::DuplicateAtom(name.clone()));
            }
        }
        Ok(Universe { atoms, index })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.atoms
    }

    pub fn atom(&self, name: &str) -> Result<Atom, KernelError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| KernelError::UnknownAtom(name.to_string()))
    }

    pub fn name(&self, atom: Atom) -> &str {
        &self.atoms[atom.index()]
    }

    pub fn full_set(&self) -> AtomSet {
        AtomSet::full(self.atoms.len())
    }

    pub fn set_of<S: AsRef<str>>(&self, names: &[S]) -> Result<AtomSet, KernelError> {
        let mut set = AtomSet::EMPTY;
        for n in names {
            set.insert(self.atom(n.as_ref())?);
        }
        Ok(set)
    }

    pub fn set_names(&self, set: AtomSet) -> Vec<&str> {
        set.iter().map(|a| self.name(a)).collect()
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'.')
}

/// A runtime value. Atoms only appear as bound variables and literals;
/// state variables hold `Nat`, `Bool`, or `Set`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Bool(bool),
    Nat(u64),
    Atom(Atom),
    Set(AtomSet),
}

impl Value {
    pub fn sort(&self) -> Sort {
        match self {
            Value::Bool(_) => Sort::Bool,
            Value::Nat(_) => Sort::Nat,
            Value::Atom(_) => Sort::Atom,
            Value::Set(_) => Sort::Set,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Value::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_nat(&self) -> Option<u64> {
        match *self {
            Value::Nat(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_set(&self) -> Option<AtomSet> {
        match *self {
            Value::Set(s) => Some(s),
            _ => None,
        }
    }

    pub fn display<'a>(&'a self, universe: &'a Universe) -> impl fmt::Display + 'a {
        ValueDisplay {
            value: self,
            universe,
        }
    }
}

struct ValueDisplay<'a> {
    value: &'a Value,
    universe: &'a Universe,
}

impl fmt::Display for ValueDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self.value {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Nat(n) => write!(f, "{n}"),
            Value::Atom(a) => f.write_str(self.universe.name(a)),
            Value::Set(s) => write!(f, "{{{}}}", self.universe.set_names(s).join(",")),
        }
    }
}

/// Sort of an expression node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sort {
    Bool,
    Nat,
    Atom,
    Set,
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sort::Bool => "bool",
            Sort::Nat => "nat",
            Sort::Atom => "atom",
            Sort::Set => "atomset",
        })
    }
}

/// Declared kind of a state variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Nat { bound: Option<u64> },
    Bool,
    AtomSet,
}

impl VarKind {
    pub fn sort(&self) -> Sort {
        match self {
            VarKind::Nat { .. } => Sort::Nat,
            VarKind::Bool => Sort::Bool,
            VarKind::AtomSet => Sort::Set,
        }
    }

    pub fn admits(&self, value: &Value, universe: &Universe) -> bool {
        match (self, value) {
            (VarKind::Nat { bound }, Value::Nat(n)) => bound.is_none_or(|b| *n <= b),
            (VarKind::Bool, Value::Bool(_)) => true,
            (VarKind::AtomSet, Value::Set(s)) => s.is_subset(universe.full_set()),
            _ => false,
        }
    }

    /// All values of this kind, in ascending canonical order.
    pub fn values(&self, universe: &Universe) -> Result<Vec<Value>, KernelError> {
        match *self {
            VarKind::Nat { bound: Some(b) } => Ok((0..=b).map(Value::Nat).collect()),
            VarKind::Nat { bound: None } => Err(KernelError::UnboundedDomain),
            VarKind::Bool => Ok(vec![Value::Bool(false), Value::Bool(true)]),
            VarKind::AtomSet => Ok(AtomSet::all_subsets(universe.len())
                .into_iter()
                .map(Value::Set)
                .collect()),
        }
    }
}

/// Finite domain for event parameters and quantified variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Domain {
    /// Every atom of the universe.
    Atoms,
    Bool,
    /// Naturals `0..=max`.
    Nat {
        max: u64,
    },
    /// Every subset of the universe.
    Subsets,
    /// Atoms of a set-sorted expression, evaluated in the current state.
    Within(Box<super::Expr>),
}

impl Domain {
    pub fn sort(&self) -> Sort {
        match self {
            Domain::Atoms | Domain::Within(_) => Sort::Atom,
            Domain::Bool => Sort::Bool,
            Domain::Nat { .. } => Sort::Nat,
            Domain::Subsets => Sort::Set,
        }
    }
}
