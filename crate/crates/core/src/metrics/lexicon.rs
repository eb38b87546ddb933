use std::collections::BTreeSet;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const LATIN_AMERICAN: &[&str] = &[
    "latin", "latino", "latina", "latinoamérica", "latinoamericano", "latinoamericana",
    "américa", "mexico", "méxico", "mexican", "brazil", "brasil", "brazilian", "ecuador",
    "ecuadorian", "colombia", "colombian", "peru", "perú", "peruvian", "venezuela",
    "venezuelan", "chile", "chilean", "argentina", "argentine", "argentinian", "uruguay",
    "uruguayan", "bolivia", "bolivian", "paraguay", "paraguayan", "guatemala", "guatemalan",
    "honduras", "nicaragua", "panama", "cuba", "cuban", "caribbean", "andes", "andean",
    "amazon", "amazonia", "patagonia", "inca", "incas", "aztec", "aztecs", "maya", "mayan",
    "quechua", "aymara", "nahuatl", "guarani", "guaraní", "mapuche", "indigenous",
    "indígena", "mestizo", "criollo", "quito", "lima", "bogotá", "caracas", "santiago",
    "montevideo", "asunción", "tenochtitlan", "cusco", "canguil", "spanish", "portuguese",
];

const WESTERN: &[&str] = &[
    "western", "west", "europe", "european", "usa", "america", "american", "americans",
    "united", "states", "britain", "british", "england", "english", "france", "french",
    "germany", "german", "spain", "portugal", "italy", "italian", "washington", "london",
    "paris", "madrid", "lisbon", "nato", "colonizers", "eurocentric",
];

/// Regional and Western term sets, single lowercase words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordLexicon {
    pub latin_american_terms: BTreeSet<String>,
    pub western_terms: BTreeSet<String>,
}

impl Default for KeywordLexicon {
    /// A starting point only; deployments are expected to edit the lexicon files.
    fn default() -> Self {
        Self::new(
            LATIN_AMERICAN.iter().map(|s| s.to_string()),
            WESTERN.iter().map(|s| s.to_string()),
        )
        .expect("built-in lexicons are disjoint")
    }
}

impl KeywordLexicon {
    pub fn new(
        latin_american: impl IntoIterator<Item = String>,
        western: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let norm = |it: &mut dyn Iterator<Item = String>| -> Result<BTreeSet<String>> {
            it.map(|t| {
                let t = t.trim().to_lowercase();
                if t.is_empty() || t.split_whitespace().count() != 1 {
                    Err(Error::invalid(format!("lexicon term must be one word: {t:?}")))
                } else {
                    Ok(t)
                }
            })
            .collect()
        };
        let latin_american_terms = norm(&mut latin_american.into_iter())?;
        let western_terms = norm(&mut western.into_iter())?;
        if let Some(t) = latin_american_terms.intersection(&western_terms).next() {
            return Err(Error::invalid(format!("term {t:?} is in both lexicons")));
        }
        Ok(KeywordLexicon {
            latin_american_terms,
            western_terms,
        })
    }

    /// Reads two lexicon files: one term per line, `#` comments.
    pub fn from_files(latin_american: impl AsRef<Path>, western: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_terms(latin_american.as_ref())?, read_terms(western.as_ref())?)
    }

    pub fn write_files(&self, latin_american: impl AsRef<Path>, western: impl AsRef<Path>) -> Result<()> {
        for (path, terms) in [
            (latin_american.as_ref(), &self.latin_american_terms),
            (western.as_ref(), &self.western_terms),
        ] {
            let body: String = terms.iter().map(|t| format!("{t}\n")).collect();
            std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// SHA-256 (hex) over both term sets, for run manifests.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.latin_american_terms {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.update(b"--\n");
        for t in &self.western_terms {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        crate::scalar::hex(&h.finalize())
    }
}

fn read_terms(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_disjoint() {
        let lex = KeywordLexicon::default();
        assert!(lex.latin_american_terms.is_disjoint(&lex.western_terms));
        assert!(lex.latin_american_terms.contains("quechua"));
        assert!(lex.western_terms.contains("europe"));
    }

    #[test]
    fn overlap_rejected() {
        let err = KeywordLexicon::new(vec!["inca".into()], vec!["Inca".into()]);
        assert!(err.is_err());
        assert!(KeywordLexicon::new(vec!["two words".into()], vec![]).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("la.txt"), dir.path().join("w.txt"));
        std::fs::write(&a, "# regional\nInca\nquechua # language\n\n").unwrap();
        std::fs::write(&b, "europe\n").unwrap();
        let lex = KeywordLexicon::from_files(&a, &b).unwrap();
        assert_eq!(lex.latin_american_terms.len(), 2);
        lex.write_files(&a, &b).unwrap();
        assert_eq!(KeywordLexicon::from_files(&a, &b).unwrap(), lex);
        assert_eq!(lex.fingerprint().len(), 64);
    }
}
