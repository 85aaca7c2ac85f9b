use std::fmt;

/// Method prototype: parameter and return type descriptors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prototype {
    pub params: Vec<String>,
    pub ret: String,
}

impl Prototype {
    /// Parse `(params)ret`, e.g. `(ILjava/lang/String;)V`.
    pub fn parse(text: &str) -> Option<Prototype> {
        let rest = text.strip_prefix('(')?;
        let close = rest.find(')')?;
        let params = parse_type_list(&rest[..close])?;
        let ret = &rest[close + 1..];
        if type_len(ret)? != ret.len() {
            return None;
        }
        Some(Prototype {
            params,
            ret: ret.to_string(),
        })
    }

    /// Shorty form as stored in DEX `proto_id_item`s.
    pub fn shorty(&self) -> String {
        std::iter::once(&self.ret)
            .chain(self.params.iter())
            .map(|t| match t.as_bytes()[0] {
                b'L' | b'[' => 'L',
                c => c as char,
            })
            .collect()
    }
}

impl fmt::Display for Prototype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for p in &self.params {
            f.write_str(p)?;
        }
        write!(f, "){}", self.ret)
    }
}

/// Length in bytes of the single type descriptor at the start of `s`.
fn type_len(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while bytes.get(i) == Some(&b'[') {
        i += 1;
    }
    match bytes.get(i)? {
        b'V' | b'Z' | b'B' | b'S' | b'C' | b'I' | b'J' | b'F' | b'D' => Some(i + 1),
        b'L' => {
            let semi = s[i..].find(';')?;
            if semi < 2 {
                return None;
            }
            Some(i + semi + 1)
        }
        _ => None,
    }
}

/// Split a concatenation of type descriptors into its parts.
pub fn parse_type_list(mut s: &str) -> Option<Vec<String>> {
    let mut out = Vec::new();
    while !s.is_empty() {
        let n = type_len(s)?;
        out.push(s[..n].to_string());
        s = &s[n..];
    }
    Some(out)
}

/// Split `Lclass;->name(proto)ret` into its components.
pub(crate) fn parse_signature(text: &str) -> Option<(String, String, Prototype)> {
    let (class, rest) = text.split_once("->")?;
    if !class.starts_with(['L', '[']) || type_len(class)? != class.len() {
        return None;
    }
    let paren = rest.find('(')?;
    let name = &rest[..paren];
    if name.is_empty() || name.contains(['(', ')', ';', '/']) {
        return None;
    }
    let proto = Prototype::parse(&rest[paren..])?;
    Some((class.to_string(), name.to_string(), proto))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_prototypes() {
        let p = Prototype::parse("(I[JLjava/lang/String;)Z").unwrap();
        assert_eq!(p.params, vec!["I", "[J", "Ljava/lang/String;"]);
        assert_eq!(p.ret, "Z");
        assert_eq!(p.to_string(), "(I[JLjava/lang/String;)Z");
        assert_eq!(p.shorty(), "ZILL");
        assert!(Prototype::parse("()").is_none());
        assert!(Prototype::parse("(Q)V").is_none());
        assert!(Prototype::parse("()VV").is_none());
    }

    #[test]
    fn parses_signatures() {
        let (c, n, p) = parse_signature("Landroid/app/Activity;-><init>()V").unwrap();
        assert_eq!(c, "Landroid/app/Activity;");
        assert_eq!(n, "<init>");
        assert_eq!(p.to_string(), "()V");
        assert!(parse_signature("La;->()V").is_none());
        assert!(parse_signature("a->b()V").is_none());
        assert!(parse_signature("La;b()V").is_none());
    }
}
