#include "cwb/store.hpp"

#include <sqlite3.h>

#include "cwb/error.hpp"

namespace cwb::store {

namespace {

const char* kSchema = R"sql(
PRAGMA foreign_keys = ON;
CREATE TABLE IF NOT EXISTS benchmarks (
  id TEXT PRIMARY KEY,
  document TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS executions (
  id TEXT PRIMARY KEY,
  benchmark_id TEXT NOT NULL REFERENCES benchmarks(id),
  cause TEXT NOT NULL,
  token TEXT NOT NULL,
  created_at INTEGER NOT NULL,
  state TEXT NOT NULL,
  dev_mode INTEGER NOT NULL,
  displayed_status TEXT NOT NULL,
  updated_at INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS executions_benchmark ON executions(benchmark_id);
CREATE TABLE IF NOT EXISTS events (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  execution_id TEXT NOT NULL REFERENCES executions(id),
  at INTEGER NOT NULL,
  event TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS events_execution ON events(execution_id, seq);
CREATE TRIGGER IF NOT EXISTS events_append_only_update BEFORE UPDATE ON events
  BEGIN SELECT RAISE(ABORT, 'event log is append-only'); END;
CREATE TRIGGER IF NOT EXISTS events_append_only_delete BEFORE DELETE ON events
  BEGIN SELECT RAISE(ABORT, 'event log is append-only'); END;
CREATE TABLE IF NOT EXISTS observations (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  execution_id TEXT NOT NULL REFERENCES executions(id),
  metric TEXT NOT NULL,
  text_value TEXT,
  num_value REAL,
  offset_ms INTEGER,
  recorded_at INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS observations_execution ON observations(execution_id, metric);
CREATE TABLE IF NOT EXISTS batches (
  execution_id TEXT NOT NULL REFERENCES executions(id),
  batch_id TEXT NOT NULL,
  PRIMARY KEY (execution_id, batch_id)
);
CREATE TABLE IF NOT EXISTS log_lines (
  cursor INTEGER PRIMARY KEY AUTOINCREMENT,
  execution_id TEXT NOT NULL REFERENCES executions(id),
  at INTEGER NOT NULL,
  text TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS log_lines_execution ON log_lines(execution_id, cursor);
CREATE TABLE IF NOT EXISTS resources (
  id TEXT NOT NULL,
  provider TEXT NOT NULL,
  execution_id TEXT NOT NULL REFERENCES executions(id),
  document TEXT NOT NULL,
  PRIMARY KEY (provider, id)
);
CREATE TABLE IF NOT EXISTS recipes (
  name TEXT NOT NULL,
  version TEXT NOT NULL,
  document TEXT NOT NULL,
  PRIMARY KEY (name, version)
);
)sql";

std::int64_t secs(Instant t) { return t.time_since_epoch().count(); }
Instant instant(std::int64_t s) { return Instant{Seconds{s}}; }

class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &s_, nullptr) != SQLITE_OK)
      throw Error(Errc::StoreUnavailable, sqlite3_errmsg(db));
  }
  ~Stmt() { sqlite3_finalize(s_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, const std::string& v) {
    sqlite3_bind_text(s_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Stmt& bind(int i, std::int64_t v) {
    sqlite3_bind_int64(s_, i, v);
    return *this;
  }
  Stmt& bind(int i, double v) {
    sqlite3_bind_double(s_, i, v);
    return *this;
  }
  Stmt& bind_null(int i) {
    sqlite3_bind_null(s_, i);
    return *this;
  }

  // True while rows are available.
  bool step() {
    int rc = sqlite3_step(s_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    auto code = sqlite3_extended_errcode(db_);
    if (code == SQLITE_CONSTRAINT_FOREIGNKEY)
      throw Error(Errc::BadRequest, std::string("referential integrity: ") + sqlite3_errmsg(db_));
    if (code == SQLITE_CONSTRAINT_PRIMARYKEY || code == SQLITE_CONSTRAINT_UNIQUE)
      throw Error(Errc::Conflict, sqlite3_errmsg(db_));
    throw Error(Errc::StoreUnavailable, sqlite3_errmsg(db_));
  }
  void run() {
    step();
    sqlite3_reset(s_);
    sqlite3_clear_bindings(s_);
  }

  std::string text(int col) const {
    auto p = sqlite3_column_text(s_, col);
    return p ? std::string(reinterpret_cast<const char*>(p), sqlite3_column_bytes(s_, col)) : std::string();
  }
  std::int64_t i64(int col) const { return sqlite3_column_int64(s_, col); }
  double real(int col) const { return sqlite3_column_double(s_, col); }
  bool null(int col) const { return sqlite3_column_type(s_, col) == SQLITE_NULL; }

 private:
  sqlite3* db_;
  sqlite3_stmt* s_ = nullptr;
};

class Transaction {
 public:
  explicit Transaction(sqlite3* db) : db_(db) { run("BEGIN IMMEDIATE"); }
  ~Transaction() {
    if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  void commit() {
    run("COMMIT");
    done_ = true;
  }

 private:
  void run(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "transaction failed";
      sqlite3_free(err);
      throw Error(Errc::StoreUnavailable, msg);
    }
  }
  sqlite3* db_;
  bool done_ = false;
};

ExecutionRecord read_execution(const Stmt& s) {
  ExecutionRecord r;
  r.id = s.text(0);
  r.benchmark_id = s.text(1);
  r.cause = s.text(2);
  r.token = s.text(3);
  r.created_at = instant(s.i64(4));
  r.state = fsm::parse_state(s.text(5)).value_or(fsm::initial_state());
  r.dev_mode = s.i64(6) != 0;
  r.displayed_status = s.text(7);
  r.updated_at = instant(s.i64(8));
  return r;
}

constexpr const char* kExecutionColumns =
    "SELECT id, benchmark_id, cause, token, created_at, state, dev_mode, displayed_status, updated_at "
    "FROM executions";

}  // namespace

Store::Store(const std::string& path) {
  int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX;
  if (sqlite3_open_v2(path.c_str(), &db_, flags, nullptr) != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : "cannot open";
    sqlite3_close(db_);
    db_ = nullptr;
    throw Error(Errc::StoreUnavailable, path + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  try {
    exec_sql("PRAGMA journal_mode = WAL;");
    exec_sql(kSchema);
  } catch (...) {
    sqlite3_close(db_);
    throw;
  }
}

Store::~Store() { sqlite3_close(db_); }

void Store::exec_sql(const char* sql) const {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "statement failed";
    sqlite3_free(err);
    throw Error(Errc::StoreUnavailable, msg);
  }
}

void Store::put_benchmark(const model::BenchmarkDefinition& def) {
  std::lock_guard lock(mu_);
  Stmt(db_, "INSERT INTO benchmarks(id, document) VALUES(?, ?) "
            "ON CONFLICT(id) DO UPDATE SET document = excluded.document")
      .bind(1, def.id)
      .bind(2, model::to_json(def).dump())
      .run();
}

std::optional<nlohmann::json> Store::benchmark(const std::string& id) const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT document FROM benchmarks WHERE id = ?");
  s.bind(1, id);
  if (!s.step()) return std::nullopt;
  return nlohmann::json::parse(s.text(0));
}

std::vector<nlohmann::json> Store::benchmarks() const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT document FROM benchmarks ORDER BY id");
  std::vector<nlohmann::json> out;
  while (s.step()) out.push_back(nlohmann::json::parse(s.text(0)));
  return out;
}

void Store::create_execution(const ExecutionRecord& r, Instant created_at) {
  std::lock_guard lock(mu_);
  Transaction tx(db_);
  Stmt(db_, "INSERT INTO executions VALUES(?, ?, ?, ?, ?, ?, ?, ?, ?)")
      .bind(1, r.id)
      .bind(2, r.benchmark_id)
      .bind(3, r.cause)
      .bind(4, r.token)
      .bind(5, secs(r.created_at))
      .bind(6, std::string(fsm::to_string(r.state)))
      .bind(7, std::int64_t{r.dev_mode})
      .bind(8, r.displayed_status)
      .bind(9, secs(r.updated_at))
      .run();
  Stmt(db_, "INSERT INTO events(execution_id, at, event) VALUES(?, ?, ?)")
      .bind(1, r.id)
      .bind(2, secs(created_at))
      .bind(3, std::string(fsm::to_string(fsm::ExecutionEvent::Created)))
      .run();
  tx.commit();
}

void Store::append_event(const std::string& execution_id, const fsm::LoggedEvent& ev,
                         fsm::ExecutionState state, bool dev_mode, const std::string& displayed) {
  std::lock_guard lock(mu_);
  Transaction tx(db_);
  Stmt(db_, "INSERT INTO events(execution_id, at, event) VALUES(?, ?, ?)")
      .bind(1, execution_id)
      .bind(2, secs(ev.at))
      .bind(3, std::string(fsm::to_string(ev.event)))
      .run();
  Stmt(db_, "UPDATE executions SET state = ?, dev_mode = ?, displayed_status = ?, updated_at = ? "
            "WHERE id = ?")
      .bind(1, std::string(fsm::to_string(state)))
      .bind(2, std::int64_t{dev_mode})
      .bind(3, displayed)
      .bind(4, secs(ev.at))
      .bind(5, execution_id)
      .run();
  tx.commit();
}

std::optional<ExecutionRecord> Store::execution(const std::string& id) const {
  std::lock_guard lock(mu_);
  Stmt s(db_, (std::string(kExecutionColumns) + " WHERE id = ?").c_str());
  s.bind(1, id);
  if (!s.step()) return std::nullopt;
  return read_execution(s);
}

std::vector<ExecutionRecord> Store::executions(const ExecutionFilter& f) const {
  std::string sql = std::string(kExecutionColumns) + " WHERE 1 = 1";
  if (f.state) sql += " AND (state = ?1 OR replace(displayed_status, ' ', '_') = ?1)";
  if (f.benchmark_id) sql += " AND benchmark_id = ?2";
  if (f.created_from) sql += " AND created_at >= ?3";
  if (f.created_to) sql += " AND created_at < ?4";
  sql += " ORDER BY created_at, id";
  std::lock_guard lock(mu_);
  Stmt s(db_, sql.c_str());
  if (f.state) s.bind(1, *f.state);
  if (f.benchmark_id) s.bind(2, *f.benchmark_id);
  if (f.created_from) s.bind(3, secs(*f.created_from));
  if (f.created_to) s.bind(4, secs(*f.created_to));
  std::vector<ExecutionRecord> out;
  while (s.step()) out.push_back(read_execution(s));
  return out;
}

std::vector<fsm::LoggedEvent> Store::events(const std::string& execution_id) const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT at, event FROM events WHERE execution_id = ? ORDER BY seq");
  s.bind(1, execution_id);
  std::vector<fsm::LoggedEvent> out;
  while (s.step()) {
    auto ev = fsm::parse_event(s.text(1));
    if (!ev) throw Error(Errc::StoreUnavailable, "corrupt event " + s.text(1));
    out.push_back({instant(s.i64(0)), *ev});
  }
  return out;
}

void Store::save_resource(const std::string& execution_id, const ResourceHandle& h) {
  std::lock_guard lock(mu_);
  Stmt(db_, "INSERT INTO resources(id, provider, execution_id, document) VALUES(?, ?, ?, ?) "
            "ON CONFLICT(provider, id) DO UPDATE SET document = excluded.document")
      .bind(1, h.id)
      .bind(2, h.provider)
      .bind(3, execution_id)
      .bind(4, nlohmann::json(h).dump())
      .run();
}

std::vector<ResourceHandle> Store::resources(const std::string& execution_id) const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT document FROM resources WHERE execution_id = ? ORDER BY rowid");
  s.bind(1, execution_id);
  std::vector<ResourceHandle> out;
  while (s.step()) out.push_back(nlohmann::json::parse(s.text(0)).get<ResourceHandle>());
  return out;
}

BatchResult Store::add_observations(const std::string& execution_id,
                                    std::span<const results::Observation> obs,
                                    const std::optional<std::string>& batch_id) {
  std::lock_guard lock(mu_);
  Transaction tx(db_);
  if (batch_id) {
    Stmt check(db_, "SELECT 1 FROM batches WHERE execution_id = ? AND batch_id = ?");
    check.bind(1, execution_id).bind(2, *batch_id);
    if (check.step()) return {0, true};
    Stmt(db_, "INSERT INTO batches VALUES(?, ?)").bind(1, execution_id).bind(2, *batch_id).run();
  }
  Stmt ins(db_, "INSERT INTO observations(execution_id, metric, text_value, num_value, offset_ms, recorded_at) "
                "VALUES(?, ?, ?, ?, ?, ?)");
  for (const auto& o : obs) {
    ins.bind(1, execution_id).bind(2, o.metric);
    if (const auto* s = std::get_if<std::string>(&o.value)) {
      ins.bind(3, *s).bind_null(4);
    } else {
      ins.bind_null(3).bind(4, std::get<double>(o.value));
    }
    if (o.offset_ms) {
      ins.bind(5, *o.offset_ms);
    } else {
      ins.bind_null(5);
    }
    ins.bind(6, secs(o.recorded_at));
    ins.run();
  }
  tx.commit();
  return {obs.size(), false};
}

std::vector<results::Observation> Store::observations(const std::string& execution_id,
                                                      const std::optional<std::string>& metric) const {
  std::string sql =
      "SELECT metric, text_value, num_value, offset_ms, recorded_at FROM observations "
      "WHERE execution_id = ?1";
  if (metric) sql += " AND metric = ?2";
  sql += " ORDER BY metric, offset_ms, seq";
  std::lock_guard lock(mu_);
  Stmt s(db_, sql.c_str());
  s.bind(1, execution_id);
  if (metric) s.bind(2, *metric);
  std::vector<results::Observation> out;
  while (s.step()) {
    results::Observation o;
    o.execution_id = execution_id;
    o.metric = s.text(0);
    if (s.null(2)) {
      o.value = s.text(1);
    } else {
      o.value = s.real(2);
    }
    if (!s.null(3)) o.offset_ms = s.i64(3);
    o.recorded_at = instant(s.i64(4));
    out.push_back(std::move(o));
  }
  return out;
}

std::size_t Store::observation_count(const std::string& execution_id) const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT count(*) FROM observations WHERE execution_id = ?");
  s.bind(1, execution_id);
  s.step();
  return static_cast<std::size_t>(s.i64(0));
}

std::int64_t Store::append_log(const std::string& execution_id, Instant at, const std::string& text) {
  std::lock_guard lock(mu_);
  Stmt(db_, "INSERT INTO log_lines(execution_id, at, text) VALUES(?, ?, ?)")
      .bind(1, execution_id)
      .bind(2, secs(at))
      .bind(3, text)
      .run();
  return sqlite3_last_insert_rowid(db_);
}

std::vector<LogLine> Store::log_after(const std::string& execution_id, std::int64_t cursor,
                                      std::size_t limit) const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT cursor, at, text FROM log_lines WHERE execution_id = ? AND cursor > ? "
              "ORDER BY cursor LIMIT ?");
  s.bind(1, execution_id).bind(2, cursor).bind(3, static_cast<std::int64_t>(limit));
  std::vector<LogLine> out;
  while (s.step()) out.push_back({s.i64(0), instant(s.i64(1)), s.text(2)});
  return out;
}

void Store::put_recipe(const nlohmann::json& recipe) {
  std::lock_guard lock(mu_);
  Stmt(db_, "INSERT INTO recipes VALUES(?, ?, ?) "
            "ON CONFLICT(name, version) DO UPDATE SET document = excluded.document")
      .bind(1, recipe.at("name").get<std::string>())
      .bind(2, recipe.at("version").get<std::string>())
      .bind(3, recipe.dump())
      .run();
}

std::vector<nlohmann::json> Store::recipes() const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT document FROM recipes ORDER BY name, version");
  std::vector<nlohmann::json> out;
  while (s.step()) out.push_back(nlohmann::json::parse(s.text(0)));
  return out;
}

}  // namespace cwb::store
