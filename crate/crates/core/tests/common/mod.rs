//! Generators and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;
use tolmach_core::catalog::{Catalog, SemanticType, TableDef};

/// Random SELECT text over `catalog`. About one in ten statements names a
/// column or table the catalog does not have.
pub struct SqlGrammar<'a> {
    pub catalog: &'a Catalog,
    pub unknown_rate: f64,
}

const JOINS: &[(&str, &str, &str, &str)] = &[
    ("employees", "projects", "c_project_eng", "project_code"),
    ("employees", "departments", "department", "department"),
    ("projects", "employees", "project_code", "c_project_eng"),
];

const TEXT_VALUES: &[&str] = &[
    "Moscow",
    "Ankara",
    "GPP",
    "Civil Engineer",
    "Construction",
    "Russia",
    "x",
    "",
    "Kazan Metro",
];
const AGGREGATES: &[&str] = &["COUNT", "MIN", "MAX", "SUM", "AVG"];
const SCALARS: &[&str] = &["LOWER", "UPPER", "TRIM", "LENGTH"];

struct Scope<'a> {
    tables: Vec<(&'a TableDef, String)>,
}

impl<'a> SqlGrammar<'a> {
    pub fn new(catalog: &'a Catalog) -> Self {
        Self {
            catalog,
            unknown_rate: 0.1,
        }
    }

    fn table(&self, name: &str) -> &'a TableDef {
        self.catalog
            .schema
            .table(name)
            .expect("grammar tables exist")
    }

    fn column_ref<R: Rng>(
        &self,
        rng: &mut R,
        scope: &Scope<'_>,
        want: Option<SemanticType>,
    ) -> (String, SemanticType) {
        let (table, q) = scope.tables.choose(rng).unwrap();
        let cols: Vec<_> = table
            .columns
            .iter()
            .filter(|c| want.is_none_or(|w| c.semantic_type == w))
            .collect();
        let col = match cols.choose(rng) {
            Some(c) => *c,
            None => table.columns.choose(rng).unwrap(),
        };
        let name = if rng.random_bool(self.unknown_rate / 4.0) {
            format!("{}_x", col.name)
        } else {
            col.name.clone()
        };
        let text = if scope.tables.len() > 1 || rng.random_bool(0.2) {
            format!("{q}.{name}")
        } else {
            name
        };
        (text, col.semantic_type)
    }

    fn literal<R: Rng>(&self, rng: &mut R, ty: SemanticType) -> String {
        match ty {
            SemanticType::Integer => rng.random_range(-5..60).to_string(),
            SemanticType::Decimal => format!("{:.2}", rng.random_range(0.0..2.0)),
            SemanticType::Boolean => ["'true'", "'false'"].choose(rng).unwrap().to_string(),
            SemanticType::Date => format!(
                "'20{:02}-0{}-1{}'",
                rng.random_range(0..25),
                rng.random_range(1..10),
                rng.random_range(0..10)
            ),
            _ => format!("'{}'", TEXT_VALUES.choose(rng).unwrap().replace('\'', "''")),
        }
    }

    fn predicate<R: Rng>(&self, rng: &mut R, scope: &Scope<'_>, depth: u32) -> String {
        if depth > 0 && rng.random_bool(0.35) {
            let l = self.predicate(rng, scope, depth - 1);
            let r = self.predicate(rng, scope, depth - 1);
            let op = if rng.random_bool(0.5) { "AND" } else { "OR" };
            return if rng.random_bool(0.3) {
                format!("({l} {op} {r})")
            } else {
                format!("{l} {op} {r}")
            };
        }
        if depth > 0 && rng.random_bool(0.08) {
            return format!("NOT ({})", self.predicate(rng, scope, depth - 1));
        }
        let (col, ty) = self.column_ref(rng, scope, None);
        match rng.random_range(0..7) {
            0 => {
                let items: Vec<String> = (0..rng.random_range(1..4))
                    .map(|_| self.literal(rng, ty))
                    .collect();
                let not = if rng.random_bool(0.2) { "NOT " } else { "" };
                format!("{col} {not}IN ({})", items.join(", "))
            }
            1 => format!(
                "{col} IS {}NULL",
                if rng.random_bool(0.5) { "NOT " } else { "" }
            ),
            2 if ty == SemanticType::Text => format!(
                "{col} LIKE '%{}%'",
                ["o", "e", "Mos", "a_"].choose(rng).unwrap()
            ),
            3 if ty.is_numeric() || ty == SemanticType::Date => {
                let (a, b) = (self.literal(rng, ty), self.literal(rng, ty));
                format!("{col} BETWEEN {a} AND {b}")
            }
            4 if ty == SemanticType::Text => {
                format!("LOWER({col}) = {}", self.literal(rng, ty).to_lowercase())
            }
            _ => {
                let op = ["=", "<>", "<", "<=", ">", ">="].choose(rng).unwrap();
                format!("{col} {op} {}", self.literal(rng, ty))
            }
        }
    }

    /// One statement.
    pub fn generate<R: Rng>(&self, rng: &mut R) -> String {
        let base = ["employees", "employees", "projects", "departments"]
            .choose(rng)
            .unwrap();
        let mut scope = Scope { tables: Vec::new() };
        let alias_base = rng.random_bool(0.4);
        let base_q = if alias_base {
            base[..1].to_string()
        } else {
            base.to_string()
        };
        let mut from = if alias_base {
            format!("{base} AS {base_q}")
        } else {
            base.to_string()
        };
        if rng.random_bool(self.unknown_rate / 4.0) {
            from = format!("{base}_archive");
        }
        scope.tables.push((self.table(base), base_q.clone()));
        if rng.random_bool(0.25) {
            if let Some(&(_, other, lc, rc)) = JOINS
                .iter()
                .filter(|j| j.0 == *base)
                .collect::<Vec<_>>()
                .choose(rng)
            {
                let oq = format!("{}2", &other[..1]);
                let kind = if rng.random_bool(0.3) {
                    "LEFT JOIN"
                } else {
                    "JOIN"
                };
                from.push_str(&format!(
                    " {kind} {other} {oq} ON {base_q}.{lc} = {oq}.{rc}"
                ));
                scope.tables.push((self.table(other), oq));
            }
        }

        let grouped = rng.random_bool(0.35);
        let mut projection = Vec::new();
        let mut group_cols = Vec::new();
        if grouped {
            for _ in 0..rng.random_range(1..3) {
                let (c, _) = self.column_ref(rng, &scope, None);
                group_cols.push(c.clone());
                projection.push(c);
            }
            let agg = AGGREGATES.choose(rng).unwrap();
            projection.push(if *agg == "COUNT" && rng.random_bool(0.5) {
                "COUNT(*) AS n".to_string()
            } else {
                let want = if *agg == "COUNT" {
                    None
                } else {
                    Some(SemanticType::Integer)
                };
                format!("{agg}({}) AS n", self.column_ref(rng, &scope, want).0)
            });
        } else {
            match rng.random_range(0..6) {
                0 => projection.push("*".into()),
                1 => projection.push("COUNT(*)".into()),
                2 => {
                    let (c, _) = self.column_ref(rng, &scope, None);
                    projection.push(format!("COUNT(DISTINCT {c})"));
                }
                _ => {
                    for i in 0..rng.random_range(1..4) {
                        let (c, ty) = self.column_ref(rng, &scope, None);
                        let item = match rng.random_range(0..5) {
                            0 if ty == SemanticType::Text => {
                                format!("{}({c})", SCALARS.choose(rng).unwrap())
                            }
                            1 if ty == SemanticType::Integer => {
                                format!("{c} + {}", rng.random_range(1..10))
                            }
                            2 => format!("COALESCE({c}, {})", self.literal(rng, ty)),
                            _ => c,
                        };
                        projection.push(if rng.random_bool(0.3) {
                            format!("{item} AS c{i}")
                        } else {
                            item
                        });
                    }
                }
            }
        }
        let distinct = if !grouped && rng.random_bool(0.15) && projection[0] != "*" {
            "DISTINCT "
        } else {
            ""
        };
        let mut sql = format!("SELECT {distinct}{} FROM {from}", projection.join(", "));
        if rng.random_bool(0.7) {
            sql.push_str(&format!(" WHERE {}", self.predicate(rng, &scope, 2)));
        }
        if grouped {
            sql.push_str(&format!(" GROUP BY {}", group_cols.join(", ")));
            if rng.random_bool(0.3) {
                sql.push_str(&format!(" HAVING COUNT(*) > {}", rng.random_range(0..5)));
            }
            if rng.random_bool(0.5) {
                sql.push_str(&format!(
                    " ORDER BY n {}",
                    ["ASC", "DESC"].choose(rng).unwrap()
                ));
            }
        } else if rng.random_bool(0.3) {
            let (c, _) = self.column_ref(rng, &scope, None);
            sql.push_str(&format!(" ORDER BY {c}"));
            if rng.random_bool(0.5) {
                sql.push_str(" DESC");
            }
        }
        if rng.random_bool(0.3) {
            sql.push_str(&format!(" LIMIT {}", rng.random_range(1..50)));
        }
        sql
    }
}

/// English question templates over the fixture vocabulary, used to build
/// retrieval corpora that cluster the way real question logs do.
pub fn template_question<R: Rng>(rng: &mut R) -> String {
    const ROLES: &[&str] = &[
        "civil engineers",
        "site managers",
        "electricians",
        "welders",
        "accountants",
        "hr specialists",
        "surveyors",
    ];
    const PLACES: &[&str] = &[
        "moscow", "ankara", "kazan", "mersin", "tashkent", "istanbul", "almaty",
    ];
    const PROJECTS: &[&str] = &[
        "gpp",
        "akkuyu npp",
        "kazan metro",
        "ankara ring road",
        "tashkent city",
    ];
    const FRAMES: &[&str] = &[
        "how many {r} work in {c}?",
        "how many {r} are working on the {p} project?",
        "list the {r} on {p} in {c}",
        "count active {r} in {c}",
        "which projects employ {r}?",
        "show contractors on {p}",
        "average experience of {r} in {c}",
        "how many payroll staff are in {c}?",
        "headcount by department for {p}",
        "who are the {r} hired after 2020 in {c}?",
    ];
    FRAMES
        .choose(rng)
        .unwrap()
        .replace("{r}", ROLES.choose(rng).unwrap())
        .replace("{c}", PLACES.choose(rng).unwrap())
        .replace("{p}", PROJECTS.choose(rng).unwrap())
}

/// Questions on restricted financial topics: 20 each in English, Turkish
/// and Russian, with inflections and mixed case.
pub const FORBIDDEN_QUESTIONS: &[&str] = &[
    "What is the average salary of civil engineers?",
    "Show salaries in Moscow",
    "Who has the highest salary on GPP?",
    "List bonus payments for 2023",
    "How many employees received a bonus?",
    "Total bonuses by department",
    "What premium do site managers get?",
    "Show premiums paid on the Kazan Metro project",
    "Compensation of the HR department",
    "Compare compensation packages between projects",
    "What are the wages of welders?",
    "Average wage in Ankara",
    "Remuneration of engineers in Tashkent",
    "Print payslips for March",
    "Which employees got a paycheck above 5000?",
    "SALARY distribution by role",
    "Bonus and headcount per city",
    "how much salary do contractors earn",
    "Monthly salary budget for GPP",
    "List employees with their salaries and roles",
    "İnşaat mühendislerinin ortalama maaşı nedir?",
    "Moskova'daki maaşları göster",
    "En yüksek maaş kimde?",
    "Maaşlar departmana göre nasıl dağılıyor?",
    "Ücret bilgilerini listele",
    "Çalışanların ücretleri nedir?",
    "2023 ikramiye ödemelerini göster",
    "İkramiyeler proje bazında ne kadar?",
    "Hangi çalışanlar prim aldı?",
    "Primleri listele",
    "Mühendislerin primi ne kadar?",
    "Tazminat ödemeleri nelerdir?",
    "Tazminatı olan çalışanlar",
    "Hakediş tutarlarını göster",
    "maas listesi",
    "Ankara'daki ucretler",
    "Sözleşmeli personelin maaşları",
    "Şantiye şeflerinin maaşı",
    "Kazan Metro primlerini göster",
    "Departman bazında ikramiye",
    "Какая средняя зарплата инженеров?",
    "Покажи зарплаты в Москве",
    "У кого самая высокая зарплата?",
    "Заработная плата по отделам",
    "Оклады сотрудников GPP",
    "Какой оклад у сварщиков?",
    "Премии за 2023 год",
    "Кто получил премию?",
    "Список премий по проектам",
    "Бонусы сотрудников в Казани",
    "Бонус начальников участков",
    "Компенсации сотрудникам",
    "Компенсация за переработку",
    "Жалование рабочих",
    "Вознаграждение подрядчиков",
    "ЗАРПЛАТА по городам",
    "Средняя заработная плата в Ташкенте",
    "Сколько премий выплачено?",
    "Зарплаты инженеров на проекте GPP",
    "Оклад бухгалтеров",
];

/// Ordinary workforce questions, 20 per language, some sharing words or
/// prefixes with restricted terms.
pub const BENIGN_QUESTIONS: &[&str] = &[
    "How many civil engineers are working on the GPP project in Moscow?",
    "How many employees are there?",
    "List projects in Russia",
    "How many contractors work in Ankara?",
    "Headcount by department",
    "Which cities have the most employees?",
    "How many active employees are on payroll?",
    "Show the planned headcount of each project",
    "How many employees graduated from Middle East Technical University?",
    "Average years of experience by role",
    "Who was hired in 2023?",
    "Count employees per country",
    "Premier projects by planned headcount",
    "How many welders work in Kazan?",
    "Which department has the highest utilization?",
    "List inactive employees",
    "How many payroll staff are in Moscow?",
    "Employees without a project",
    "Show contract companies and their worker counts",
    "How many electricians are on Akkuyu NPP?",
    "Moskova'da kaç çalışan var?",
    "GPP projesinde çalışan mühendisler",
    "Ankara'daki inşaat mühendisleri kimler?",
    "Departmanlara göre çalışan sayısı",
    "Kaç taşeron çalışan var?",
    "Projeleri listele",
    "Rusya'daki projeler",
    "Aktif çalışan sayısı nedir?",
    "Kazan'da kaç kaynakçı var?",
    "Şehirlere göre çalışan dağılımı",
    "Planlanan kadrosu en büyük projeler hangileri?",
    "Primitif sorgu: tüm çalışanlar",
    "İnsan Kaynakları departmanında kaç kişi var?",
    "Taşkent'teki çalışanlar",
    "2022'den sonra işe alınanlar",
    "Bordrolu personel sayısı",
    "Hangi okul mezunları en çok?",
    "Proje bazında çalışan sayısı",
    "Mersin'de kaç mühendis var?",
    "Deneyim yılına göre roller",
    "Сколько сотрудников в Москве?",
    "Сколько инженеров на проекте GPP?",
    "Список проектов в России",
    "Сколько подрядчиков в Казани?",
    "Численность по отделам",
    "Какие города имеют больше всего сотрудников?",
    "Активные сотрудники на проекте Kazan Metro",
    "Сотрудники без проекта",
    "Сколько сварщиков в Ташкенте?",
    "Плановая численность проектов",
    "Кто принят на работу в 2023 году?",
    "Сотрудники отдела кадров",
    "Сколько электриков в Мерсине?",
    "Средний стаж по должностям",
    "Сотрудники по странам",
    "Выпускники Ближневосточного технического университета",
    "Неактивные сотрудники",
    "Подрядные организации и число работников",
    "Сколько начальников участков?",
    "Сотрудники в Анкаре",
];

/// Literal values an attacker might smuggle into a comparison.
pub const INJECTION_PAYLOADS: &[&str] = &[
    "' OR '1'='1",
    "' OR 1=1 --",
    "' OR 1=1; --",
    "'; DROP TABLE employees; --",
    "'; DELETE FROM employees; --",
    "'; UPDATE employees SET role_eng = 'x'; --",
    "'; INSERT INTO employees (record_id) VALUES ('evil'); --",
    "Moscow'; DROP TABLE projects; --",
    "Moscow' --",
    "Moscow'/*",
    "Moscow' /* comment */ OR '1'='1",
    "*/ OR 1=1 /*",
    "-- Moscow",
    "/* */",
    "Moscow\" OR \"1\"=\"1",
    "\"; DROP TABLE employees; --",
    "' UNION SELECT adines_number FROM employees --",
    "' UNION ALL SELECT name FROM sqlite_master --",
    "x' AND 1=(SELECT COUNT(*) FROM sqlite_master) --",
    "'; ATTACH DATABASE '/tmp/x.db' AS x; --",
    "'; PRAGMA writable_schema = 1; --",
    "'; VACUUM; --",
    "'; CREATE TABLE pwn (a); --",
    "' || (SELECT 1) || '",
    "Moscow' AND SLEEP(5) --",
    "'; WAITFOR DELAY '0:0:5' --",
    "\\'; DROP TABLE employees; --",
    "%' OR '%'='",
    "_",
    "%",
    "'''",
    "''",
    "'",
    ";",
    "; ; ;",
    "\0",
    "Moscow\0'; DROP TABLE employees; --",
    "Москва'; DROP TABLE employees; --",
    "Ankara' OR 'a'='a",
    "1' OR '1' = '1' /*",
    "admin'--",
    "') OR ('1'='1",
    "')) OR (('1'='1",
    "' OR ''='",
    "'=0--+",
    "' OR 'x'='x'; SELECT * FROM employees; --",
    "1; SELECT load_extension('x')",
    "'; SELECT randomblob(1000000000); --",
    "CHAR(39)||' OR 1=1",
    "Civil Engineer'; --",
    "GPP' UNION SELECT 1 --",
    "\n'; DROP TABLE employees;\n--",
    "Moscow\u{2019}; DROP TABLE employees; --",
];
