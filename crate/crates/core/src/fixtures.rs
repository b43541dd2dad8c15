//! Deterministic demo data over the sample catalog.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::Catalog;
use crate::cleaning::CleanRecord;
use crate::store::AnalyticsStore;

pub const DEMO_SEED: u64 = 0x5EED_2024;
pub const DEMO_EMPLOYEES: usize = 200;

pub const FIRST_NAMES: &[&str] = &[
    "Ahmet", "Mehmet", "Ayse", "Fatma", "Emre", "Zeynep", "Murat", "Elif", "Ivan", "Olga",
    "Sergei", "Anna", "Dmitri", "Elena", "Alexei", "Natalia", "Timur", "Aigerim", "Rustam",
    "Dilnoza",
];
pub const LAST_NAMES: &[&str] = &[
    "Yilmaz",
    "Kaya",
    "Demir",
    "Sahin",
    "Celik",
    "Aydin",
    "Ozturk",
    "Ivanov",
    "Petrov",
    "Smirnova",
    "Kuznetsov",
    "Popova",
    "Sokolov",
    "Volkova",
    "Nurlanov",
    "Abdullaev",
    "Karimova",
    "Tursunov",
];
pub const SCHOOLS: &[&str] = &[
    "Middle East Technical University",
    "Istanbul Technical University",
    "Bogazici University",
    "Moscow State University",
    "Bauman Moscow State Technical University",
    "Konya Anatolian High School",
];
pub const CONTRACTORS: &[&str] = &[
    "Ustay Insaat",
    "Volga Staffing",
    "Steppe Services",
    "Anadolu Teknik",
];

/// (code, name, country, city, planned headcount)
pub const PROJECTS: &[(&str, &str, &str, &str, i64)] = &[
    ("GPP", "Gas Processing Plant", "Russia", "Moscow", 60),
    (
        "Akkuyu NPP",
        "Akkuyu Nuclear Power Plant",
        "Turkey",
        "Mersin",
        45,
    ),
    ("Kazan Metro", "Kazan Metro Line 2", "Russia", "Kazan", 30),
    (
        "Ankara Ring Road",
        "Ankara Northern Ring Road",
        "Turkey",
        "Ankara",
        25,
    ),
    (
        "Tashkent City",
        "Tashkent City Business District",
        "Uzbekistan",
        "Tashkent",
        20,
    ),
];

/// (name, cost center, headcount target, utilization)
pub const DEPARTMENTS: &[(&str, &str, i64, &str)] = &[
    ("Engineering", "CC-100", 70, "0.87"),
    ("Construction", "CC-200", 80, "0.93"),
    ("Human Resources", "CC-300", 12, "0.71"),
    ("Finance", "CC-400", 15, "0.78"),
    ("Procurement", "CC-500", 10, "0.64"),
    ("Quality Control", "CC-600", 13, "0.82"),
];

pub const COUNTRY_CITIES: &[(&str, &[&str])] = &[
    ("Russia", &["Moscow", "Saint Petersburg", "Kazan"]),
    ("Turkey", &["Ankara", "Istanbul", "Mersin"]),
    ("Kazakhstan", &["Almaty", "Astana"]),
    ("Uzbekistan", &["Tashkent"]),
];

/// (role, departments the role may sit in)
pub const ROLES: &[(&str, &[&str])] = &[
    ("Civil Engineer", &["Engineering", "Construction"]),
    ("Electrical Engineer", &["Engineering", "Construction"]),
    ("Mechanical Engineer", &["Engineering", "Construction"]),
    ("Site Manager", &["Construction"]),
    ("Project Manager", &["Engineering", "Construction"]),
    ("HR Specialist", &["Human Resources"]),
    ("Accountant", &["Finance"]),
    ("Welder", &["Construction"]),
    ("Surveyor", &["Engineering", "Construction"]),
];

pub fn base_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

fn date(rng: &mut ChaCha8Rng, from_year: i32, to_year: i32) -> String {
    let start = NaiveDate::from_ymd_opt(from_year, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(to_year, 12, 31).unwrap();
    let span = (end - start).num_days();
    (start + Duration::days(rng.random_range(0..=span)))
        .format("%Y-%m-%d")
        .to_string()
}

/// Clean employee records that satisfy every catalog rule. Same `seed`,
/// same records.
pub fn demo_employees(n: usize, seed: u64) -> Vec<CleanRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut f = BTreeMap::new();
            let mut put = |k: &str, v: String| {
                f.insert(k.to_string(), v);
            };
            let project =
                (rng.random_range(0..10) > 0).then(|| *PROJECTS.choose(&mut rng).unwrap());
            let (country, city) = match project {
                Some((_, _, country, city, _)) if rng.random_bool(0.8) => (country, city),
                Some((_, _, country, _, _)) => {
                    let cities = COUNTRY_CITIES
                        .iter()
                        .find(|(c, _)| *c == country)
                        .unwrap()
                        .1;
                    (country, *cities.choose(&mut rng).unwrap())
                }
                None => {
                    let (country, cities) = COUNTRY_CITIES.choose(&mut rng).unwrap();
                    (*country, *cities.choose(&mut rng).unwrap())
                }
            };
            let (role, depts) = ROLES.choose(&mut rng).unwrap();
            let payroll = rng.random_bool(0.7);
            put(
                "full_name",
                format!(
                    "{} {}",
                    FIRST_NAMES.choose(&mut rng).unwrap(),
                    LAST_NAMES.choose(&mut rng).unwrap()
                ),
            );
            put(
                "adines_number",
                format!("{}", rng.random_range(10_000_000_000u64..99_999_999_999)),
            );
            put("birth_date", date(&mut rng, 1965, 2000));
            put("country", country.to_string());
            put("actual_working_city", city.to_string());
            put(
                "egitimOkulAdi",
                SCHOOLS.choose(&mut rng).unwrap().to_string(),
            );
            put("role_eng", role.to_string());
            put("department", depts.choose(&mut rng).unwrap().to_string());
            if let Some((code, ..)) = project {
                put("c_project_eng", code.to_string());
            }
            put("is_payroll", payroll.to_string());
            put("employee_status", rng.random_bool(0.9).to_string());
            if payroll {
                put(
                    "payroll_number",
                    format!("P{:06}", rng.random_range(0..1_000_000)),
                );
            } else {
                put(
                    "contract_company",
                    CONTRACTORS.choose(&mut rng).unwrap().to_string(),
                );
            }
            put("hire_date", date(&mut rng, 2010, 2024));
            put("years_experience", rng.random_range(0..=30).to_string());
            CleanRecord {
                record_id: format!("E{:05}", i + 1),
                modified_at: base_time() + Duration::minutes(i as i64),
                fields: f,
                provenance: BTreeMap::new(),
                flags: Vec::new(),
            }
        })
        .collect()
}

fn row(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

pub fn demo_projects() -> Vec<BTreeMap<String, String>> {
    PROJECTS
        .iter()
        .enumerate()
        .map(|(i, (code, name, country, city, planned))| {
            row(&[
                ("project_code", code.to_string()),
                ("project_name", name.to_string()),
                ("country", country.to_string()),
                ("city", city.to_string()),
                ("start_date", format!("20{:02}-03-01", 15 + i)),
                ("planned_headcount", planned.to_string()),
            ])
        })
        .collect()
}

pub fn demo_departments() -> Vec<BTreeMap<String, String>> {
    DEPARTMENTS
        .iter()
        .map(|(name, cc, target, util)| {
            row(&[
                ("department", name.to_string()),
                ("cost_center", cc.to_string()),
                ("headcount_target", target.to_string()),
                ("utilization", util.to_string()),
            ])
        })
        .collect()
}

/// Loads the demo tables into `store`.
pub fn seed_store(store: &AnalyticsStore) -> Result<(), crate::store::StoreError> {
    store.upsert(&demo_employees(DEMO_EMPLOYEES, DEMO_SEED))?;
    store.insert_rows("projects", &demo_projects())?;
    store.insert_rows("departments", &demo_departments())?;
    Ok(())
}

/// In-memory store holding the demo data.
pub fn seeded_store(catalog: &Catalog) -> AnalyticsStore {
    let store = AnalyticsStore::open_in_memory(&catalog.schema).expect("in-memory store opens");
    seed_store(&store).expect("demo data loads");
    store
}
