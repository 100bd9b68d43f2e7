//! Math detection, Unicode→LaTeX conversion, and the linearized math layout
//! used by the structured-math backend.

use std::collections::HashMap;
use std::sync::OnceLock;

const TABLE_TSV: &str = include_str!("../../data/unicode_latex.tsv");

struct Table {
    to_latex: HashMap<char, &'static str>,
    from_command: HashMap<&'static str, char>,
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut to_latex = HashMap::new();
        let mut from_command = HashMap::new();
        for line in TABLE_TSV.lines() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (sym, latex) = line.split_once('\t').expect("table rows are symbol<TAB>latex");
            let ch = sym.chars().next().expect("non-empty symbol");
            to_latex.insert(ch, latex);
            if let Some(cmd) = latex.strip_prefix('\\') {
                from_command.insert(cmd, ch);
            }
        }
        Table {
            to_latex,
            from_command,
        }
    })
}

/// The raw conversion table rows, in file order.
pub fn conversion_table() -> Vec<(char, &'static str)> {
    TABLE_TSV
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .filter_map(|l| l.split_once('\t'))
        .map(|(s, l)| (s.chars().next().unwrap(), l))
        .collect()
}

fn is_greek(c: char) -> bool {
    ('\u{0391}'..='\u{03A9}').contains(&c) || ('\u{03B1}'..='\u{03C9}').contains(&c)
}

fn script_kind(c: char) -> Option<(char, &'static str)> {
    let latex = table().to_latex.get(&c)?;
    let marker = latex.chars().next()?;
    if marker == '^' || marker == '_' {
        let inner = latex.get(2..latex.len() - 1)?;
        Some((marker, inner))
    } else {
        None
    }
}

fn has_backslash_command(s: &str) -> bool {
    let chars: Vec<char> = s.chars().collect();
    chars
        .windows(2)
        .any(|w| w[0] == '\\' && w[1].is_ascii_alphabetic())
}

fn has_non_space_pair(s: &str) -> bool {
    let chars: Vec<char> = s.chars().collect();
    chars
        .windows(2)
        .any(|w| !w[0].is_whitespace() && !w[1].is_whitespace())
}

/// Whether `content` should go through the math path: it carries a math
/// marker and at least two adjacent non-space characters.
pub fn detect_math(content: &str) -> bool {
    let marker = content.contains(['=', '^', '_'])
        || has_backslash_command(content)
        || content.chars().any(|c| is_greek(c) || script_kind(c).is_some());
    marker && has_non_space_pair(content)
}

/// Replaces every tabled symbol with its LaTeX form. Runs of superscript or
/// subscript characters merge into one group. Idempotent.
pub fn unicode_to_latex(content: &str) -> String {
    let t = table();
    let chars: Vec<char> = content.chars().collect();
    let mut out = String::with_capacity(content.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if let Some((marker, _)) = script_kind(c) {
            out.push(marker);
            out.push('{');
            while i < chars.len() {
                match script_kind(chars[i]) {
                    Some((m, inner)) if m == marker => {
                        out.push_str(inner);
                        i += 1;
                    }
                    _ => break,
                }
            }
            out.push('}');
            continue;
        }
        match t.to_latex.get(&c) {
            Some(latex) => {
                out.push_str(latex);
                if chars.get(i + 1).is_some_and(|n| n.is_ascii_alphabetic()) {
                    out.push(' ');
                }
            }
            None => out.push(c),
        }
        i += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Base,
    Sup,
    Sub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Atom {
    pub ch: char,
    pub level: Level,
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    table: &'a Table,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn command(&mut self) -> String {
        let mut name = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_alphabetic() {
                name.push(c);
                self.pos += 1;
            } else {
                break;
            }
        }
        if name.is_empty() {
            if let Some(c) = self.peek() {
                name.push(c);
                self.pos += 1;
            }
        }
        name
    }

    fn skip_spaces(&mut self) {
        while self.peek() == Some(' ') {
            self.pos += 1;
        }
    }

    /// One argument: `{...}` group or a single item.
    fn argument(&mut self, level: Level) -> Vec<Atom> {
        self.skip_spaces();
        match self.peek() {
            Some('{') => {
                self.pos += 1;
                let atoms = self.sequence(level, true);
                if self.peek() == Some('}') {
                    self.pos += 1;
                }
                atoms
            }
            Some(_) => self.item(level),
            None => Vec::new(),
        }
    }

    fn sequence(&mut self, level: Level, in_group: bool) -> Vec<Atom> {
        let mut atoms = Vec::new();
        while let Some(c) = self.peek() {
            if c == '}' {
                if in_group {
                    break;
                }
                self.pos += 1;
                continue;
            }
            atoms.extend(self.item(level));
        }
        atoms
    }

    fn item(&mut self, level: Level) -> Vec<Atom> {
        let Some(c) = self.peek() else {
            return Vec::new();
        };
        self.pos += 1;
        let script_level = |marker: char| if marker == '^' { Level::Sup } else { Level::Sub };
        match c {
            '{' => {
                let atoms = self.sequence(level, true);
                if self.peek() == Some('}') {
                    self.pos += 1;
                }
                atoms
            }
            '^' | '_' => {
                let inner = if level == Level::Base { script_level(c) } else { level };
                self.argument(inner)
            }
            '\\' => {
                let name = self.command();
                match name.as_str() {
                    "frac" | "dfrac" | "tfrac" => {
                        let num = self.argument(level);
                        let den = self.argument(level);
                        let mut out = wrap(num, level);
                        out.push(Atom { ch: '/', level });
                        out.extend(wrap(den, level));
                        out
                    }
                    "sqrt" => {
                        let mut out = vec![Atom { ch: '√', level }];
                        out.extend(wrap(self.argument(level), level));
                        out
                    }
                    "left" | "right" | "displaystyle" | "mathrm" | "mathbf" | "text" => Vec::new(),
                    "," | ";" | " " | "quad" => vec![Atom { ch: ' ', level }],
                    other => match self.table.from_command.get(other) {
                        Some(&sym) => {
                            if self.peek() == Some(' ') {
                                self.pos += 1;
                            }
                            vec![Atom { ch: sym, level }]
                        }
                        None => other.chars().map(|ch| Atom { ch, level }).collect(),
                    },
                }
            }
            _ => vec![Atom { ch: c, level }],
        }
    }
}

fn wrap(atoms: Vec<Atom>, level: Level) -> Vec<Atom> {
    if atoms.len() <= 1 {
        return atoms;
    }
    let mut out = Vec::with_capacity(atoms.len() + 2);
    out.push(Atom { ch: '(', level });
    out.extend(atoms);
    out.push(Atom { ch: ')', level });
    out
}

/// Linearizes LaTeX-like source into positioned atoms: commands become
/// symbols, fractions become `a/b`, scripts keep their level.
pub fn layout_atoms(latex: &str) -> Vec<Atom> {
    let mut p = Parser {
        chars: latex.chars().collect(),
        pos: 0,
        table: table(),
    };
    p.sequence(Level::Base, false)
}
