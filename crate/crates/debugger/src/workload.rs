//! Synthetic order-settlement workload at desk scale.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tardisp_core::engine::{Binding, Environment};
use tardisp_core::frontend::parse_ddl;
use tardisp_core::storage::{Database, Value};

pub const SCHEMA: &str = "
CREATE TABLE Customers (id INT PRIMARY KEY, region INT NOT NULL, credit INT NOT NULL);
CREATE TABLE Orders (id INT PRIMARY KEY, customer_id INT NOT NULL, amount INT NOT NULL, status VARCHAR(8) NOT NULL);
";

/// Pays open orders above a threshold in `rounds` batches, keeping the
/// still-due orders in a table variable that is re-derived from itself.
pub const SETTLE: &str = "CREATE PROCEDURE settle(IN min_amount INT, IN rounds INT)
BEGIN
  DECLARE i INT = 0;
  DECLARE due TABLE;
  DECLARE paid INT = 0;
  DECLARE remaining INT;

  due = SELECT o.id, o.customer_id, o.amount FROM Orders o WHERE o.amount >= :min_amount AND o.status = 'open';
  WHILE i < rounds DO
    i = i + 1;
    UPDATE Orders SET status = 'paid' WHERE status = 'open' AND amount >= :min_amount AND id % :rounds = :i - 1;
    UPDATE Customers SET credit = credit - 1 WHERE id % :rounds = :i - 1;
    due = SELECT d.id, d.customer_id, d.amount FROM :due d JOIN Orders o ON o.id = d.id WHERE o.status = 'open';
    paid = SELECT COUNT(*) FROM Orders WHERE status = 'paid';
  END WHILE;
  remaining = SELECT SUM(amount) FROM :due;
END;
";

/// Amounts are uniform in 1..=AMOUNT_MAX.
pub const AMOUNT_MAX: i64 = 1000;

/// Orders and Customers with `orders` and `orders / 20` rows, loaded at
/// logical time 1.
pub fn build(orders: usize, seed: u64) -> Database {
    let mut rng = StdRng::seed_from_u64(seed);
    let db = Database::new();
    let mut w = db.writer();
    for def in parse_ddl(SCHEMA).expect("schema parses") {
        w.create_table(def).expect("fresh database");
    }
    let customers = (orders / 20).max(1);
    let at = w.advance_clock();
    let rows = (1..=customers as i64)
        .map(|id| vec![Value::Int(id), Value::Int(id % 7), Value::Int(rng.gen_range(0..100))])
        .collect();
    w.apply_insert("Customers", rows, at).expect("unique keys");
    let rows = (1..=orders as i64)
        .map(|id| {
            vec![
                Value::Int(id),
                Value::Int(rng.gen_range(1..=customers as i64)),
                Value::Int(rng.gen_range(1..=AMOUNT_MAX)),
                Value::text("open"),
            ]
        })
        .collect();
    w.apply_insert("Orders", rows, at).expect("unique keys");
    drop(w);
    db
}

pub fn args(min_amount: i64, rounds: i64) -> Environment {
    [
        ("min_amount".to_string(), Binding::Scalar(Value::Int(min_amount))),
        ("rounds".to_string(), Binding::Scalar(Value::Int(rounds))),
    ]
    .into()
}

/// Three argument sets whose intermediate results are about 1%, 10% and
/// 50% of the orders.
pub fn argument_sets() -> Vec<(&'static str, Environment)> {
    vec![
        ("small", args(AMOUNT_MAX - AMOUNT_MAX / 100 + 1, 4)),
        ("medium", args(AMOUNT_MAX - AMOUNT_MAX / 10 + 1, 4)),
        ("large", args(AMOUNT_MAX / 2 + 1, 4)),
    ]
}

/// A three-step diff over the still-due orders; `{first}`, `{mid}` and
/// `{last}` are replaced by steps of the traced run.
pub const DIFF_QUERY: &str = "SELECT o.id, o.amount, o.status FROM :due d JOIN Orders o ON o.id = d.id \
WHERE last!o.status = 'open' AT STEP first={first}, mid={mid}, last={last}";
