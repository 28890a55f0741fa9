//! Fixed word lists: the topic catalog, generic and entity vocabulary, and
//! the navigational/utility lexicon that marks noise behaviors.

/// Built-in topics: label plus four specific terms each. Terms are unique
/// across the whole catalog.
pub const TOPIC_CATALOG: &[(&str, [&str; 4])] = &[
    ("semiconductors", ["nvidia", "tsmc", "chipmaker", "foundry"]),
    ("electric-vehicles", ["tesla", "battery", "charging", "lithium"]),
    ("monetary-policy", ["fed", "inflation", "rates", "powell"]),
    ("ukraine-war", ["ukraine", "kyiv", "zelensky", "donbas"]),
    ("soccer", ["premier", "messi", "champions", "uefa"]),
    ("basketball", ["nba", "lakers", "playoffs", "lebron"]),
    ("climate", ["emissions", "wildfire", "drought", "glacier"]),
    ("space", ["nasa", "spacex", "orbit", "lunar"]),
    ("ai-research", ["openai", "chatbot", "llm", "neural"]),
    ("crypto", ["bitcoin", "ethereum", "blockchain", "stablecoin"]),
    ("housing", ["mortgage", "realestate", "rent", "foreclosure"]),
    ("elections", ["ballot", "senate", "campaign", "polling"]),
    ("healthcare", ["vaccine", "pandemic", "hospital", "medicare"]),
    ("oil-energy", ["opec", "crude", "pipeline", "refinery"]),
    ("movies", ["boxoffice", "oscars", "hollywood", "premiere"]),
    ("music", ["grammy", "album", "concert", "billboard"]),
    ("smartphones", ["iphone", "android", "samsung", "pixel"]),
    ("gaming", ["playstation", "nintendo", "esports", "xbox"]),
    ("cybersecurity", ["ransomware", "breach", "malware", "phishing"]),
    ("trade", ["tariffs", "exports", "wto", "sanctions"]),
    ("tennis", ["wimbledon", "djokovic", "atp", "grandslam"]),
    ("formula1", ["verstappen", "ferrari", "grandprix", "pitstop"]),
    ("cooking", ["recipes", "vegan", "baking", "michelin"]),
    ("travel", ["airline", "airport", "tourism", "visa"]),
    ("education", ["university", "tuition", "scholarship", "curriculum"]),
    ("stock-market", ["nasdaq", "dow", "earnings", "ipo"]),
    ("middle-east", ["gaza", "israel", "hezbollah", "ceasefire"]),
    ("fashion", ["runway", "couture", "sneakers", "vogue"]),
    ("natural-disasters", ["earthquake", "hurricane", "tsunami", "flooding"]),
    ("biotech", ["crispr", "genome", "biopharma", "trial"]),
    ("autos", ["toyota", "recall", "hybrid", "dealership"]),
    ("royals", ["monarchy", "coronation", "palace", "royal"]),
];

/// Platform and common-category words. A query made only of these is
/// generic.
pub const GENERIC_TERMS: &[&str] = &[
    "news", "sports", "technology", "latest", "update", "video", "top", "world", "live",
    "breaking", "headlines", "trending",
];

/// Topic-neutral named entities: specific, but carry no theme.
pub const ENTITY_TERMS: &[&str] = &[
    "europe", "china", "india", "california", "texas", "london", "tokyo", "brazil",
];

/// Navigational destinations (sites and apps).
pub const NAVIGATIONAL: &[&str] = &[
    "google", "youtube", "facebook", "instagram", "amazon", "netflix", "gmail", "yahoo", "bing",
    "twitter", "tiktok", "reddit", "paypal", "outlook",
];

/// Utility, login and transactional words.
pub const UTILITY: &[&str] = &[
    "weather", "today", "maps", "translate", "calculator", "email", "login", "logon", "sign",
    "signin", "in", "password", "bank", "account", "download", "app", "home", "page", "www",
    "com", "net", "org", "http", "https", "near", "me", "tracking", "log", "reset",
];

/// Token classes understood by the rubric scorers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermClass {
    Specific(usize),
    Generic,
    Entity,
    Other,
}

pub fn is_generic(token: &str) -> bool {
    GENERIC_TERMS.contains(&token)
}

pub fn is_entity(token: &str) -> bool {
    ENTITY_TERMS.contains(&token)
}

pub fn is_navigational(token: &str) -> bool {
    NAVIGATIONAL.contains(&token)
}

pub fn is_utility(token: &str) -> bool {
    UTILITY.contains(&token)
}

/// Lowercased alphanumeric tokens; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Synthetic topic for indices past the built-in catalog.
pub fn synthetic_topic(index: usize) -> (String, Vec<String>) {
    let label = format!("theme-{index:03}");
    let terms = ["ka", "lo", "mi", "zu"]
        .iter()
        .map(|s| format!("{s}{index:03}x"))
        .collect();
    (label, terms)
}
