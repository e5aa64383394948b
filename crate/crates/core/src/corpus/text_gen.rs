//! Class-conditional text pools.
//!
//! Every field class draws from its own fixed word lists, so segment labels
//! are learnable from text alone; styles (see `render`) make them
//! additionally separable from vision alone. Date lines deliberately share
//! one pool between education and work, leaving block context as the only
//! way to tell `education.time` from `work.time`.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub const FIRST_NAMES: &[&str] = &[
    "Alice", "Bob", "Carlos", "Diana", "Elena", "Frank", "Grace", "Hiro", "Irene", "Jamal",
    "Karen", "Liang", "Maria", "Noah", "Olga", "Pedro", "Qing", "Rosa", "Samir", "Tara", "Uma",
    "Victor", "Wei", "Yuki",
];

pub const LAST_NAMES: &[&str] = &[
    "Anderson", "Baker", "Chen", "Dubois", "Evans", "Fischer", "Garcia", "Huang", "Ivanov",
    "Johnson", "Kim", "Larsen", "Moreau", "Nakamura", "Okafor", "Petrov", "Quinn", "Rossi",
    "Silva", "Tanaka", "Ueda", "Vargas", "Wang", "Zhang",
];

pub const SCHOOLS: &[&str] = &[
    "Tsinghua University of Science and Technology",
    "National Institute of Applied Mathematics",
    "Pacific State University Department of Computing",
    "Fudan University School of Information",
    "Royal College of Engineering and Design",
    "Northern Polytechnic Institute of Technology",
    "Central University of Finance and Economics",
    "Metropolitan School of Electrical Engineering",
    "Eastern Normal University Faculty of Science",
    "Institute of Software Engineering Shanghai",
    "Highland University College of Natural Sciences",
    "Coastal Technical University Graduate School",
];

pub const MAJORS: &[&str] = &[
    "Major in Computer Science and Technology",
    "Major in Software Engineering",
    "Major in Applied Mathematics and Statistics",
    "Major in Electrical and Computer Engineering",
    "Major in Information Management Systems",
    "Major in Data Science and Big Data",
    "Major in Artificial Intelligence",
    "Major in Communications Engineering",
];

pub const DEGREES: &[&str] = &[
    "Bachelor of Science degree",
    "Master of Engineering degree",
    "Bachelor of Engineering degree with honors",
    "Master of Science degree",
    "Doctor of Philosophy degree",
    "Bachelor of Arts degree",
];

pub const COMPANIES: &[&str] = &[
    "ACME Software Technology Group",
    "Globex Digital Services Ltd",
    "Initech Cloud Computing Inc",
    "Umbrella Data Systems Corp",
    "Hooli Internet Technology Ltd",
    "Vandelay Industries Software Division",
    "Stark Applied Research Group",
    "Wayne Enterprise Solutions Inc",
    "Cyberdyne Intelligent Systems Ltd",
    "Tyrell Advanced Analytics Corp",
    "Wonka Information Technology Group",
    "Pied Piper Compression Inc",
];

pub const POSITIONS: &[&str] = &[
    "JAVA develop engineer",
    "senior backend develop engineer",
    "data platform engineer",
    "machine learning engineer",
    "senior data analyst",
    "frontend develop engineer",
    "site reliability engineer",
    "product operations manager",
    "algorithm research engineer",
    "quality assurance engineer",
    "mobile application developer",
    "technical project manager",
];

pub const PROJECT_CODENAMES: &[&str] = &[
    "Phoenix", "Atlas", "Borealis", "Cascade", "Dolphin", "Ember", "Falcon", "Granite", "Horizon",
    "Iris", "Jupiter", "Kestrel",
];

pub const PROJECT_KINDS: &[&str] = &[
    "trading platform",
    "recommendation system",
    "billing gateway",
    "monitoring dashboard",
    "messaging middleware",
    "search service",
    "risk control engine",
    "content delivery network",
];

pub const ROLES: &[&str] = &[
    "served as the lead backend developer",
    "served as the core algorithm designer",
    "acted as the module owner and reviewer",
    "worked as the data pipeline maintainer",
    "served as the release coordinator",
    "acted as the architecture consultant",
];

pub const SKILLS: &[&str] = &[
    "Java", "Python", "Golang", "Rust", "Spring", "Django", "React", "Vue", "MySQL", "PostgreSQL",
    "Redis", "Kafka", "Docker", "Kubernetes", "Hadoop", "Spark", "Linux", "Git", "Jenkins",
    "Elasticsearch", "MongoDB", "RabbitMQ", "Nginx", "TensorFlow",
];

pub const OPENERS: &[&str] = &[
    "Responsible for",
    "Worked on",
    "Led the development of",
    "Designed and implemented",
    "Collaborated on",
    "Maintained and optimized",
    "Refactored and extended",
    "Built and deployed",
];

pub const CHUNKS: &[&str] = &[
    "the payment gateway",
    "a distributed cache layer",
    "the reporting pipeline",
    "customer facing dashboards",
    "the internal search service",
    "an online scheduling system",
    "the order management module",
    "a realtime metrics collector",
    "the user profile service",
    "an automated testing framework",
    "the log aggregation cluster",
    "a feature rollout toolchain",
];

pub const CONNECTORS: &[&str] = &[
    "using", "with", "across", "to support", "and improved", "while scaling", "and migrated",
    "integrating",
];

pub const HOBBIES: &[&str] = &[
    "Enjoys hiking photography and classical music",
    "Interested in chess long distance running and cooking",
    "Volunteers at the local community coding club",
    "Fluent in English and conversational Japanese",
    "Hobbies include calligraphy swimming and board games",
    "Passionate about open source and technical writing",
];

pub const EMAIL_DOMAINS: &[&str] = &[
    "mailbox.com",
    "postbox.org",
    "example.net",
    "webmail.io",
    "inbox.dev",
];

pub const PHONE_PREFIXES: &[&str] = &[
    "130", "131", "135", "136", "137", "138", "139", "150", "151", "152", "155", "158", "170",
    "176", "180", "185", "186", "188",
];

pub const PHONE_GROUPS: &[&str] = &[
    "0134", "0877", "1268", "1902", "2345", "2761", "3408", "3977", "4521", "4896", "5230",
    "5674", "6089", "6733", "7312", "7845", "8120", "8564", "9041", "9678",
];

const YEARS: std::ops::Range<u32> = 1998..2024;

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

pub fn name_line(rng: &mut ChaCha8Rng) -> String {
    format!("{} {}", pick(rng, FIRST_NAMES), pick(rng, LAST_NAMES))
}

pub fn phone_line(rng: &mut ChaCha8Rng) -> String {
    format!(
        "Phone: +86 {} {} {}",
        pick(rng, PHONE_PREFIXES),
        pick(rng, PHONE_GROUPS),
        pick(rng, PHONE_GROUPS)
    )
}

pub fn email_line(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{}.{}@{}",
        pick(rng, FIRST_NAMES).to_lowercase(),
        pick(rng, LAST_NAMES).to_lowercase(),
        pick(rng, EMAIL_DOMAINS)
    )
}

pub fn school_line(rng: &mut ChaCha8Rng) -> String {
    pick(rng, SCHOOLS).to_string()
}

pub fn major_line(rng: &mut ChaCha8Rng) -> String {
    pick(rng, MAJORS).to_string()
}

pub fn degree_line(rng: &mut ChaCha8Rng) -> String {
    pick(rng, DEGREES).to_string()
}

/// Date range shared by education and work: the block must be inferred
/// from context, not from the text.
pub fn time_line(rng: &mut ChaCha8Rng) -> String {
    let start = rng.random_range(YEARS);
    let end = (start + rng.random_range(1..5)).min(YEARS.end);
    let sm = rng.random_range(1..=12u32);
    let em = rng.random_range(1..=12u32);
    format!("{start}.{sm:02} - {end}.{em:02}")
}

pub fn company_line(rng: &mut ChaCha8Rng) -> String {
    pick(rng, COMPANIES).to_string()
}

pub fn position_line(rng: &mut ChaCha8Rng) -> String {
    pick(rng, POSITIONS).to_string()
}

pub fn project_name_line(rng: &mut ChaCha8Rng) -> String {
    format!(
        "Project {} {}",
        pick(rng, PROJECT_CODENAMES),
        pick(rng, PROJECT_KINDS)
    )
}

pub fn role_line(rng: &mut ChaCha8Rng) -> String {
    pick(rng, ROLES).to_string()
}

pub fn skills_line(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(4..=6);
    let mut taken: Vec<&str> = Vec::with_capacity(n);
    while taken.len() < n {
        let s = pick(rng, SKILLS);
        if !taken.contains(&s) {
            taken.push(s);
        }
    }
    taken.join(" , ")
}

pub fn hobby_line(rng: &mut ChaCha8Rng) -> String {
    pick(rng, HOBBIES).to_string()
}

/// Deterministic word count of a line under the tokenizer's split rule.
pub fn approx_tokens(text: &str) -> usize {
    crate::vocab::split_tokens(text).len()
}

/// Builds a description sentence of roughly `target_tokens` words.
pub fn desc_line(rng: &mut ChaCha8Rng, target_tokens: usize) -> String {
    let mut text = pick(rng, OPENERS).to_string();
    let mut flip = false;
    while approx_tokens(&text) < target_tokens {
        let connector = pick(rng, CONNECTORS);
        let phrase = if flip {
            pick(rng, SKILLS)
        } else {
            pick(rng, CHUNKS)
        };
        flip = !flip;
        text.push(' ');
        text.push_str(connector);
        text.push(' ');
        text.push_str(phrase);
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn desc_line_hits_token_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for target in [8, 16, 30, 44] {
            let line = desc_line(&mut rng, target);
            let n = approx_tokens(&line);
            assert!(
                n >= target && n <= target + 6,
                "wanted ~{target} tokens, got {n}: {line}"
            );
        }
    }

    #[test]
    fn generation_is_rng_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(name_line(&mut a), name_line(&mut b));
        assert_eq!(time_line(&mut a), time_line(&mut b));
        assert_eq!(desc_line(&mut a, 20), desc_line(&mut b, 20));
    }
}
