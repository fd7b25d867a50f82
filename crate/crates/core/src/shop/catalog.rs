use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::html::{sanitize_segment, MAX_SEGMENT_LEN};
use crate::jsonl::{self, JsonlError};

/// Whole cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Price(pub u64);

impl Price {
    pub fn cents(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl Serialize for Price {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0 as f64 / 100.0)
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(serde::de::Error::custom(format!("price must be positive, got {v}")));
        }
        Ok(Price((v * 100.0).round() as u64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Apparel,
    Gifts,
    Hardware,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Apparel, Category::Gifts, Category::Hardware];

    pub fn label(self) -> &'static str {
        match self {
            Category::Apparel => "Apparel",
            Category::Gifts => "Gifts",
            Category::Hardware => "Hardware",
        }
    }

    fn bank(self) -> &'static WordBank {
        match self {
            Category::Apparel => &APPAREL,
            Category::Gifts => &GIFTS,
            Category::Hardware => &HARDWARE,
        }
    }
}

struct WordBank {
    brands: &'static [&'static str],
    modifiers: &'static [&'static str],
    items: &'static [&'static str],
    packs: &'static [&'static str],
    /// Price range in cents.
    price: (u64, u64),
    blurb: &'static str,
}

const APPAREL: WordBank = WordBank {
    brands: &["Columbia", "Northline", "Peakwear", "Urbanfit", "Trailmark"],
    modifiers: &["Mens", "Womens", "Classic", "Lightweight", "Waterproof", "Cotton", "Fleece"],
    items: &[
        "Flannel Shirt",
        "Graphic Tee",
        "Pullover Hoodie",
        "Rain Jacket",
        "Running Shoes",
        "Wool Socks",
        "Denim Jeans",
        "Sun Hat",
    ],
    packs: &[],
    price: (799, 12_999),
    blurb: "Comfortable everyday wear, machine washable.",
};

const GIFTS: WordBank = WordBank {
    brands: &["Disney", "Starlight", "Cozyhome", "Giftly", "Marvelous"],
    modifiers: &["Holiday", "Birthday", "Personalized", "Deluxe", "Mini"],
    items: &[
        "Gift Card",
        "Gift Basket",
        "Coffee Mug",
        "Photo Frame",
        "Scented Candle",
        "Plush Toy",
    ],
    packs: &[],
    price: (499, 9_999),
    blurb: "A thoughtful present for friends and family.",
};

const HARDWARE: WordBank = WordBank {
    brands: &["Spalolen", "Ironclad", "Flowpro", "Brassworks", "Pipeline"],
    modifiers: &["Brass", "PVC", "Stainless", "Half Inch", "Heavy Duty"],
    items: &[
        "Tee Connector",
        "Elbow Fitting",
        "Ball Valve",
        "Pipe Clamp",
        "Hose Adapter",
        "Compression Fitting",
    ],
    packs: &["2 Pack", "10 Pack", "30 Pack"],
    price: (299, 7_999),
    blurb: "Durable fitting for home plumbing and garden projects.",
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub product_id: String,
    pub title: String,
    pub brand: String,
    /// Noun phrase naming what the product is, e.g. "Gift Card".
    pub item: String,
    pub price: Price,
    /// Half-star rating in `[1.0, 5.0]`.
    pub rating: f64,
    pub review_count: u32,
    pub category: Category,
    pub description: String,
}

impl Product {
    /// Unique name segment used for the product's result card.
    pub fn slug(&self) -> String {
        let id = sanitize_segment(&self.product_id);
        let mut base = sanitize_segment(&self.title);
        base.truncate(MAX_SEGMENT_LEN.saturating_sub(id.len() + 1));
        while base.ends_with('_') {
            base.pop();
        }
        if base.is_empty() {
            id
        } else {
            format!("{base}_{id}")
        }
    }

    pub fn title_tokens(&self) -> HashSet<String> {
        tokenize(&self.title).into_iter().collect()
    }
}

/// Lowercase alphanumeric tokens.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("duplicate product id `{0}`")]
    DuplicateId(String),
    #[error("product `{id}` violates an invariant: {what}")]
    Invalid { id: String, what: &'static str },
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub seed: Option<u64>,
    products: Vec<Product>,
    by_id: HashMap<String, usize>,
    tokens: Vec<HashSet<String>>,
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.products == other.products
    }
}

impl Catalog {
    pub fn from_products(products: Vec<Product>, seed: Option<u64>) -> Result<Self, CatalogError> {
        let mut by_id = HashMap::with_capacity(products.len());
        for (i, p) in products.iter().enumerate() {
            if by_id.insert(p.product_id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateId(p.product_id.clone()));
            }
            check_product(p)?;
        }
        let tokens = products.iter().map(Product::title_tokens).collect();
        Ok(Catalog {
            seed,
            products,
            by_id,
            tokens,
        })
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn get(&self, product_id: &str) -> Option<&Product> {
        self.by_id.get(product_id).map(|&i| &self.products[i])
    }

    pub(crate) fn tokens_of(&self, idx: usize) -> &HashSet<String> {
        &self.tokens[idx]
    }

    pub fn read(path: &Path) -> Result<Self, CatalogError> {
        Catalog::from_products(jsonl::read(path)?, None)
    }

    pub fn write(&self, path: &Path) -> Result<(), CatalogError> {
        Ok(jsonl::write(path, &self.products)?)
    }
}

fn check_product(p: &Product) -> Result<(), CatalogError> {
    let invalid = |what| CatalogError::Invalid {
        id: p.product_id.clone(),
        what,
    };
    if p.price.0 == 0 {
        return Err(invalid("price must be positive"));
    }
    let halves = p.rating * 2.0;
    if !(1.0..=5.0).contains(&p.rating) || halves.fract() != 0.0 {
        return Err(invalid("rating must be a half star in [1, 5]"));
    }
    if sanitize_segment(&p.product_id).is_empty() {
        return Err(invalid("product id must contain alphanumerics"));
    }
    Ok(())
}

/// Deterministic catalog of `n_products` products drawn from the apparel,
/// gift and hardware word banks.
pub fn gen_catalog(seed: u64, n_products: usize) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rating_dist = Normal::new(4.0, 0.8).expect("valid normal");
    let products = (0..n_products)
        .map(|i| {
            let category = Category::ALL[i % Category::ALL.len()];
            let bank = category.bank();
            let brand = *bank.brands.choose(&mut rng).expect("non-empty bank");
            let modifier = *bank.modifiers.choose(&mut rng).expect("non-empty bank");
            let item = *bank.items.choose(&mut rng).expect("non-empty bank");
            let title = match bank.packs.choose(&mut rng) {
                Some(pack) => format!("{brand} {pack} {modifier} {item}"),
                None => format!("{brand} {modifier} {item}"),
            };
            let price = Price(rng.random_range(bank.price.0..=bank.price.1));
            let raw: f64 = rating_dist.sample(&mut rng);
            let rating = ((raw * 2.0).round() / 2.0).clamp(1.0, 5.0);
            let review_count = 10f64.powf(rng.random_range(0.0..4.0)).floor() as u32;
            let description = format!("{title}. {}", bank.blurb);
            Product {
                product_id: format!("p{i:05}"),
                title,
                brand: brand.to_owned(),
                item: item.to_owned(),
                price,
                rating,
                review_count,
                category,
                description,
            }
        })
        .collect();
    Catalog::from_products(products, Some(seed)).expect("generated products satisfy invariants")
}

/// Products whose titles share at least one token with `query`, by
/// descending overlap (distinct query tokens found in the title), ties by
/// ascending product id.
pub fn rank<'a>(catalog: &'a Catalog, query: &str) -> Vec<&'a Product> {
    let mut q = tokenize(query);
    q.sort();
    q.dedup();
    let mut scored: Vec<(usize, &Product)> = catalog
        .products
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let toks = catalog.tokens_of(i);
            let score = q.iter().filter(|t| toks.contains(*t)).count();
            (score > 0).then_some((score, p))
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.product_id.cmp(&b.1.product_id)));
    scored.into_iter().map(|(_, p)| p).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(gen_catalog(42, 100), gen_catalog(42, 100));
        assert_ne!(gen_catalog(42, 100), gen_catalog(43, 100));
        assert_eq!(gen_catalog(7, 1).len(), 1);
    }

    #[test]
    fn invariants_hold_across_seeds() {
        for seed in 0..100 {
            for p in gen_catalog(seed, 100).products() {
                assert!(p.price.cents() > 0);
                assert!((1.0..=5.0).contains(&p.rating));
                assert_eq!((p.rating * 2.0).fract(), 0.0);
            }
        }
    }

    #[test]
    fn slugs_are_unique_valid_segments() {
        let c = gen_catalog(1, 500);
        let slugs: HashSet<_> = c.products().iter().map(Product::slug).collect();
        assert_eq!(slugs.len(), 500);
        for s in &slugs {
            assert_eq!(&sanitize_segment(s), s);
        }
    }

    #[test]
    fn price_serde_is_two_decimal() {
        let p = Price(1299);
        assert_eq!(serde_json::to_string(&p).unwrap(), "12.99");
        let back: Price = serde_json::from_str("12.99").unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Price>("0").is_err());
        assert_eq!(p.to_string(), "$12.99");
    }

    #[test]
    fn file_round_trip() {
        let c = gen_catalog(3, 20);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        c.write(&path).unwrap();
        let back = Catalog::read(&path).unwrap();
        assert_eq!(back.products(), c.products());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let c = gen_catalog(3, 2);
        let mut ps = c.products().to_vec();
        ps[1].product_id = ps[0].product_id.clone();
        assert!(matches!(
            Catalog::from_products(ps, None),
            Err(CatalogError::DuplicateId(_))
        ));
    }
}
