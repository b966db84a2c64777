#pragma once

// Review sessions: an append-only action log folded over the detection
// cache. Logs persist as JSON Lines with periodic full-state snapshots.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "meningrade/core.hpp"
#include "meningrade/grader.hpp"
#include "meningrade/pipeline.hpp"
#include "meningrade/review.hpp"

namespace meningrade {

enum class ActionKind { evidence_action, override, manual_add, clear_override };

inline std::string_view to_string(ActionKind k) {
  switch (k) {
    case ActionKind::evidence_action: return "evidence_action";
    case ActionKind::override: return "override";
    case ActionKind::manual_add: return "manual_add";
    case ActionKind::clear_override: return "clear_override";
  }
  return "";
}

inline ActionKind action_kind_from_string(std::string_view s) {
  for (auto k : {ActionKind::evidence_action, ActionKind::override, ActionKind::manual_add, ActionKind::clear_override})
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::validation, "unknown action kind '" + std::string(s) + "'");
}

struct Action {
  std::int64_t seq = 0;
  ActionKind kind = ActionKind::evidence_action;
  json payload = json::object();
  std::string actor;
  std::string timestamp;
};

inline void to_json(json& j, const Action& a) {
  j = json{{"seq", a.seq}, {"kind", to_string(a.kind)}, {"payload", a.payload}, {"actor", a.actor},
           {"timestamp", a.timestamp}};
}

inline void from_json(const json& j, Action& a) {
  a.seq = j.at("seq").get<std::int64_t>();
  a.kind = action_kind_from_string(j.at("kind").get<std::string>());
  a.payload = j.value("payload", json::object());
  a.actor = j.value("actor", std::string{});
  a.timestamp = j.value("timestamp", std::string{});
}

// Body of POST /sessions/{sid}/actions: {"kind": ..., "payload": {...}, "actor": ...}.
// Payload fields may also sit at the top level.
inline Action action_from_request(const json& body) {
  if (!body.is_object()) throw Error(ErrorCode::validation, "action must be a JSON object");
  if (!body.contains("kind") || !body.at("kind").is_string()) throw Error(ErrorCode::validation, "action needs a kind");
  Action a;
  a.kind = action_kind_from_string(body.at("kind").get<std::string>());
  if (body.contains("payload")) {
    if (!body.at("payload").is_object()) throw Error(ErrorCode::validation, "payload must be an object");
    a.payload = body.at("payload");
  } else {
    a.payload = body;
    a.payload.erase("kind");
    a.payload.erase("actor");
  }
  if (body.contains("actor") && body.at("actor").is_string()) a.actor = body.at("actor").get<std::string>();
  return a;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

namespace detail {

inline const json& field(const json& p, const char* name) {
  if (!p.contains(name)) throw Error(ErrorCode::validation, std::string("payload is missing '") + name + "'");
  return p.at(name);
}

inline std::string string_field(const json& p, const char* name) {
  const auto& v = field(p, name);
  if (!v.is_string()) throw Error(ErrorCode::validation, std::string("'") + name + "' must be a string");
  return v.get<std::string>();
}

inline CriterionKind criterion_field(const json& p) {
  const auto s = string_field(p, "criterion");
  try {
    return criterion_from_string(s);
  } catch (const Error&) {
    throw Error(ErrorCode::validation, "unknown criterion '" + s + "'");
  }
}

inline ReviewStatus review_action(const std::string& s) {
  if (s == "approve") return ReviewStatus::approved;
  if (s == "decline") return ReviewStatus::declined;
  if (s == "uncertain") return ReviewStatus::uncertain;
  throw Error(ErrorCode::validation, "action must be approve, decline or uncertain");
}

}  // namespace detail

// Applies one action to the review state. `current` is the analysis of
// `state`. Throws validation errors without touching anything.
inline ReviewState apply_action(const CaseData& data, const ReviewState& state, const Analysis& current,
                                const Action& a) {
  ReviewState next = state;
  const auto& p = a.payload;
  if (!p.is_object()) throw Error(ErrorCode::validation, "payload must be an object");
  switch (a.kind) {
    case ActionKind::evidence_action: {
      const auto id = detail::string_field(p, "evidence_id");
      const auto status = detail::review_action(detail::string_field(p, "action"));
      if (!current.has_evidence(id)) throw Error(ErrorCode::validation, "unknown evidence '" + id + "'");
      next.status[id] = status;
      break;
    }
    case ActionKind::override: {
      const auto k = detail::criterion_field(p);
      const auto v = override_from_json(k, detail::field(p, "value"));
      apply_override(current.snapshot, k, v);  // validates
      next.overrides[k] = v;
      break;
    }
    case ActionKind::clear_override: {
      const auto k = detail::criterion_field(p);
      if (k == CriterionKind::MitoticCount) throw Error(ErrorCode::validation, "mitotic count has no override");
      next.overrides.erase(k);
      break;
    }
    case ActionKind::manual_add: {
      if (p.contains("criterion") && detail::criterion_field(p) != CriterionKind::MitoticCount)
        throw Error(ErrorCode::validation, "manual additions are mitoses only");
      const auto slide_id = detail::string_field(p, "slide_id");
      const auto* slide = data.manifest.find_slide(slide_id);
      if (!slide) throw Error(ErrorCode::validation, "unknown slide '" + slide_id + "'");
      if (slide->stain != Stain::HE) throw Error(ErrorCode::validation, "manual mitoses go on H&E slides");
      Rect box;
      try {
        if (p.contains("bbox")) {
          box = p.at("bbox").get<Rect>();
        } else {
          const auto x = detail::field(p, "x").get<std::int64_t>();
          const auto y = detail::field(p, "y").get<std::int64_t>();
          const std::int64_t side = p.value("size", std::int64_t{32});
          box = {std::max<std::int64_t>(0, x - side / 2), std::max<std::int64_t>(0, y - side / 2), side, side};
        }
      } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, std::string("bad manual detection: ") + e.what());
      }
      if (!box.valid() || !slide->bounds().contains(box.center()))
        throw Error(ErrorCode::validation, "manual detection outside the slide");
      Detection d;
      d.detection_id = "manual-" + std::to_string(state.manual.size() + 1);
      d.slide_id = slide_id;
      d.criterion = CriterionKind::MitoticCount;
      d.bbox = box;
      d.tile = box;
      d.prob = 1.0;
      d.status = ReviewStatus::approved;
      next.manual.push_back(d);
      break;
    }
  }
  return next;
}

struct Materialized {
  std::int64_t seq = 0;
  ReviewState review;
  Analysis analysis;
};

// Canonical materialized state; used for replay comparisons and snapshots.
inline json state_json(const std::string& case_id, const Materialized& m) {
  return json{{"case_id", case_id}, {"seq", m.seq}, {"review", m.review}, {"grading", analysis_json(m.analysis)}};
}

inline Materialized initial_state(const CaseData& data) {
  Materialized m;
  m.analysis = analyze(data, m.review);
  return m;
}

// Folds actions onto `from`. Sequence numbers must continue without gaps.
inline Materialized replay(const CaseData& data, const std::vector<Action>& log, Materialized from) {
  for (const auto& a : log) {
    if (a.seq != from.seq + 1)
      throw Error(ErrorCode::corruption,
                  "action log gap: expected seq " + std::to_string(from.seq + 1) + ", found " + std::to_string(a.seq));
    from.review = apply_action(data, from.review, from.analysis, a);
    from.analysis = analyze(data, from.review);
    from.seq = a.seq;
  }
  return from;
}

inline Materialized replay(const CaseData& data, const std::vector<Action>& log) {
  return replay(data, log, initial_state(data));
}

class Session {
 public:
  Session(std::string id, std::string case_id, std::shared_ptr<const CaseData> data, std::filesystem::path dir,
          int snapshot_every)
      : id_(std::move(id)), case_id_(std::move(case_id)), data_(std::move(data)), dir_(std::move(dir)),
        snapshot_every_(snapshot_every), state_(initial_state(*data_)) {
    created_ = updated_ = utc_timestamp();
  }

  const std::string& id() const { return id_; }
  const std::string& case_id() const { return case_id_; }
  const CaseData& data() const { return *data_; }

  // Validates, appends and folds. Rejected actions leave log and state as they were.
  std::pair<Action, GradeResult> submit(Action a) {
    std::lock_guard lock(mu_);
    a.seq = state_.seq + 1;
    if (a.timestamp.empty()) a.timestamp = utc_timestamp();
    Materialized next;
    next.review = apply_action(*data_, state_.review, state_.analysis, a);
    next.analysis = analyze(*data_, next.review);
    next.seq = a.seq;
    if (!dir_.empty()) append_log(a);
    log_.push_back(a);
    state_ = std::move(next);
    updated_ = a.timestamp;
    if (!dir_.empty() && snapshot_every_ > 0 && state_.seq % snapshot_every_ == 0) write_snapshot();
    return {a, state_.analysis.grade};
  }

  Materialized state() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  std::vector<Action> log() const {
    std::lock_guard lock(mu_);
    return log_;
  }

  json to_json() const {
    std::lock_guard lock(mu_);
    auto j = state_json(case_id_, state_);
    j["session_id"] = id_;
    j["created"] = created_;
    j["updated"] = updated_;
    j["actions"] = log_.size();
    return j;
  }

  void persist_meta() const {
    if (dir_.empty()) return;
    std::filesystem::create_directories(dir_);
    write_text_file(dir_ / "session.json",
                    json{{"session_id", id_}, {"case_id", case_id_}, {"created", created_}}.dump(2) + "\n");
    if (!std::filesystem::exists(dir_ / "actions.jsonl")) write_text_file(dir_ / "actions.jsonl", "");
  }

  // Rebuilds a session from disk: latest snapshot plus the log suffix.
  static std::unique_ptr<Session> load(const std::filesystem::path& dir, std::shared_ptr<const CaseData> data,
                                       int snapshot_every) {
    const auto meta = read_json_file(dir / "session.json");
    auto s = std::make_unique<Session>(meta.at("session_id").get<std::string>(), meta.at("case_id").get<std::string>(),
                                       std::move(data), dir, snapshot_every);
    s->created_ = meta.value("created", s->created_);
    for (const auto& j : read_json_lines(dir / "actions.jsonl")) s->log_.push_back(j.get<Action>());
    Materialized base = initial_state(*s->data_);
    if (std::filesystem::exists(dir / "snapshot.json")) {
      const auto snap = read_json_file(dir / "snapshot.json");
      base.seq = snap.at("seq").get<std::int64_t>();
      base.review = snap.at("review").get<ReviewState>();
      base.analysis = analyze(*s->data_, base.review);
      if (base.seq > static_cast<std::int64_t>(s->log_.size()))
        throw Error(ErrorCode::corruption, "snapshot is ahead of the action log");
    }
    const std::vector<Action> suffix(s->log_.begin() + base.seq, s->log_.end());
    s->state_ = replay(*s->data_, suffix, std::move(base));
    if (!s->log_.empty()) s->updated_ = s->log_.back().timestamp;
    return s;
  }

 private:
  void append_log(const Action& a) {
    std::ofstream f(dir_ / "actions.jsonl", std::ios::app | std::ios::binary);
    f << json(a).dump() << "\n";
    if (!f) throw Error(ErrorCode::missing_file, "cannot append to action log in " + dir_.string());
  }

  void write_snapshot() const {
    const auto tmp = dir_ / "snapshot.json.tmp";
    write_text_file(tmp, json{{"seq", state_.seq}, {"review", state_.review}}.dump() + "\n");
    std::filesystem::rename(tmp, dir_ / "snapshot.json");
  }

  std::string id_;
  std::string case_id_;
  std::shared_ptr<const CaseData> data_;
  std::filesystem::path dir_;
  int snapshot_every_ = 20;
  mutable std::mutex mu_;
  std::vector<Action> log_;
  Materialized state_;
  std::string created_;
  std::string updated_;
};

// Processed cases plus their sessions.
class SessionStore {
 public:
  // `sessions_dir` empty keeps sessions in memory only.
  explicit SessionStore(std::filesystem::path sessions_dir = {}) : dir_(std::move(sessions_dir)) {}

  void add_case(const std::filesystem::path& processed_dir) {
    auto data = std::make_shared<CaseData>(load_case_data(processed_dir));
    std::unique_lock lock(mu_);
    const auto id = data->manifest.case_id;
    cases_[id] = CaseEntry{processed_dir, std::move(data), {}};
  }

  // Registers either a processed case directory or a directory of them.
  void add_cases_under(const std::filesystem::path& root) {
    if (is_processed(root)) {
      add_case(root);
      return;
    }
    if (!std::filesystem::is_directory(root)) throw Error(ErrorCode::missing_file, "no cases under " + root.string());
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(root))
      if (e.is_directory() && is_processed(e.path())) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) add_case(d);
  }

  void load_sessions() {
    if (dir_.empty() || !std::filesystem::exists(dir_)) return;
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(dir_))
      if (e.is_directory() && std::filesystem::exists(e.path() / "session.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      const auto case_id = read_json_file(d / "session.json").at("case_id").get<std::string>();
      std::shared_ptr<const CaseData> data;
      {
        std::shared_lock lock(mu_);
        const auto it = cases_.find(case_id);
        if (it == cases_.end()) continue;
        data = it->second.data;
      }
      auto s = Session::load(d, data, data->config.snapshot_every);
      std::unique_lock lock(mu_);
      next_id_ = std::max(next_id_, parse_counter(s->id()) + 1);
      sessions_[s->id()] = std::move(s);
    }
  }

  std::vector<std::string> case_ids() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, c] : cases_) out.push_back(id);
    return out;
  }

  std::shared_ptr<const CaseData> case_data(const std::string& case_id) const {
    std::shared_lock lock(mu_);
    const auto it = cases_.find(case_id);
    if (it == cases_.end()) throw Error(ErrorCode::not_found, "unknown case '" + case_id + "'");
    return it->second.data;
  }

  std::filesystem::path case_dir(const std::string& case_id) const {
    std::shared_lock lock(mu_);
    const auto it = cases_.find(case_id);
    if (it == cases_.end()) throw Error(ErrorCode::not_found, "unknown case '" + case_id + "'");
    return it->second.dir;
  }

  // Suggested (unreviewed) analysis, computed once per case.
  const Analysis& initial_analysis(const std::string& case_id) {
    std::unique_lock lock(mu_);
    auto it = cases_.find(case_id);
    if (it == cases_.end()) throw Error(ErrorCode::not_found, "unknown case '" + case_id + "'");
    if (!it->second.initial) it->second.initial = analyze(*it->second.data, ReviewState{});
    return *it->second.initial;
  }

  Session& create_session(const std::string& case_id) {
    auto data = case_data(case_id);
    std::unique_lock lock(mu_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06lld", static_cast<long long>(next_id_++));
    const std::string id = buf;
    auto s = std::make_unique<Session>(id, case_id, data, dir_.empty() ? dir_ : dir_ / id,
                                       data->config.snapshot_every);
    s->persist_meta();
    auto& ref = *s;
    sessions_[id] = std::move(s);
    return ref;
  }

  Session& session(const std::string& id) {
    std::shared_lock lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::not_found, "unknown session '" + id + "'");
    return *it->second;
  }

 private:
  struct CaseEntry {
    std::filesystem::path dir;
    std::shared_ptr<const CaseData> data;
    std::optional<Analysis> initial;
  };

  static std::int64_t parse_counter(const std::string& id) {
    try {
      return id.size() > 1 ? std::stoll(id.substr(1)) : 0;
    } catch (const std::exception&) {
      return 0;
    }
  }

  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, CaseEntry> cases_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
  std::int64_t next_id_ = 1;
};

}  // namespace meningrade
