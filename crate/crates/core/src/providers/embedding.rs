use super::{require_text, Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::words;

pub const HASHED_BOW_DIM: usize = 64;

/// Bag-of-words embedder: each token is hashed (FNV-1a, 64 bit) to an index and counted.
#[derive(Debug, Clone)]
pub struct HashedBagOfWords {
    dimension: usize,
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        HashedBagOfWords {
            dimension: HASHED_BOW_DIM,
        }
    }
}

impl HashedBagOfWords {
    pub fn with_dimension(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(HashedBagOfWords { dimension })
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dimension as u64) as usize
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl<T: Scalar> Embedder<T> for HashedBagOfWords {
    fn identity(&self) -> String {
        format!("double:hashed-bow(dim={})", self.dimension)
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.dimension)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>> {
        require_text(text)?;
        let mut v = vec![T::zero(); self.dimension];
        for w in words(text) {
            let i = self.bucket(&w);
            v[i] = v[i] + T::one();
        }
        EmbeddingVector::new(v)
    }
}

/// Componentwise mean of equally sized vectors.
pub fn average_embedding<T: Scalar>(vectors: &[EmbeddingVector<T>]) -> Result<EmbeddingVector<T>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::invalid("cannot average an empty list of embeddings"))?;
    let dim = first.dimension();
    if let Some(bad) = vectors.iter().find(|v| v.dimension() != dim) {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {dim}",
            bad.dimension()
        )));
    }
    let n = T::of_usize(vectors.len());
    let mean = (0..dim)
        .map(|i| vectors.iter().map(|v| v.components()[i]).sum::<T>() / n)
        .collect();
    EmbeddingVector::new(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::cosine_similarity;

    fn embed(text: &str) -> EmbeddingVector<f64> {
        HashedBagOfWords::default().embed(text).unwrap()
    }

    #[test]
    fn deterministic_and_counting() {
        assert_eq!(embed("la la tierra"), embed("la la tierra"));
        let v = embed("la la tierra");
        assert_eq!(v.components().iter().sum::<f64>(), 3.0);
        let bow = HashedBagOfWords::default();
        assert_eq!(v.components()[bow.bucket("la")], 2.0);
    }

    #[test]
    fn disjoint_vocabularies_are_orthogonal() {
        // Chosen so that the hashing oracle puts the two sides in different buckets.
        let bow = HashedBagOfWords::default();
        let left = ["inca", "quechua"];
        let right = ["europe", "paris"];
        let lb: Vec<_> = left.iter().map(|w| bow.bucket(w)).collect();
        let rb: Vec<_> = right.iter().map(|w| bow.bucket(w)).collect();
        assert!(lb.iter().all(|b| !rb.contains(b)), "hash collision: {lb:?} {rb:?}");
        let sim = cosine_similarity(&embed("inca quechua"), &embed("europe paris")).unwrap();
        assert_eq!(sim, 0.0);
        let same = cosine_similarity(&embed("inca quechua"), &embed("Inca Quechua")).unwrap();
        assert!((same - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(Embedder::<f64>::embed(&HashedBagOfWords::default(), "").is_err());
    }

    #[test]
    fn averaging() {
        let v = EmbeddingVector::new(vec![0.25, -3.0]).unwrap();
        assert_eq!(average_embedding(std::slice::from_ref(&v)).unwrap(), v);
        let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(average_embedding(&[a, b]).unwrap().components(), [0.5, 0.5]);
        assert_eq!(average_embedding(&vec![v.clone(); 5]).unwrap(), v);
        let c = EmbeddingVector::new(vec![1.0]).unwrap();
        assert!(average_embedding(&[v, c]).is_err());
        assert!(average_embedding::<f64>(&[]).is_err());
    }
}
