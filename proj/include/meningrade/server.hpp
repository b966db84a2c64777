#pragma once

// HTTP API over processed cases and review sessions.

#include <httplib.h>

#include <map>
#include <memory>
#include <string>

#include "meningrade/aggregator.hpp"
#include "meningrade/review.hpp"
#include "meningrade/session.hpp"
#include "meningrade/tiler.hpp"

namespace meningrade {

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::not_found:
    case ErrorCode::out_of_range:
    case ErrorCode::missing_file: return 404;
    case ErrorCode::validation:
    case ErrorCode::schema_violation:
    case ErrorCode::invalid_metadata:
    case ErrorCode::contract: return 422;
    case ErrorCode::precondition: return 409;
    case ErrorCode::unsupported: return 400;
    default: return 500;
  }
}

class ApiServer {
 public:
  explicit ApiServer(SessionStore& store) : store_(store) {
    for (const auto& id : store_.case_ids()) {
      const auto data = store_.case_data(id);
      for (const auto& meta : data->manifest.slides) slides_.emplace(meta.slide_id, PyramidSlide(meta, meta.pyramid_path));
    }
    routes();
  }

  httplib::Server& http() { return srv_; }

  bool listen(const std::string& host, int port) { return srv_.listen(host, port); }
  int bind_any_port(const std::string& host) { return srv_.bind_to_any_port(host); }
  bool listen_after_bind() { return srv_.listen_after_bind(); }
  void stop() { srv_.stop(); }

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  template <typename Fn>
  static auto guarded(Fn fn) {
    return [fn](const Req& req, Res& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.code()), to_string(e.code()), e.what());
      } catch (const json::exception& e) {
        send_error(res, 422, "validation", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  static void send_error(Res& res, int status, std::string_view code, const std::string& msg) {
    res.status = status;
    res.set_content(json{{"error", code}, {"message", msg}}.dump(), "application/json");
  }

  static void send_json(Res& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  // Analysis of the case, or of a session on it when ?session= is given.
  Analysis analysis_for(const std::string& case_id, const Req& req) {
    if (req.has_param("session")) {
      auto& s = store_.session(req.get_param_value("session"));
      if (s.case_id() != case_id) throw Error(ErrorCode::not_found, "session belongs to another case");
      return s.state().analysis;
    }
    return store_.initial_analysis(case_id);
  }

  const PyramidSlide& slide(const std::string& id) const {
    const auto it = slides_.find(id);
    if (it == slides_.end()) throw Error(ErrorCode::not_found, "unknown slide '" + id + "'");
    return it->second;
  }

  static std::int64_t int_param(const Req& req, const char* name, std::optional<std::int64_t> fallback = {}) {
    if (!req.has_param(name)) {
      if (fallback) return *fallback;
      throw Error(ErrorCode::validation, std::string("missing query parameter '") + name + "'");
    }
    try {
      std::size_t used = 0;
      const auto s = req.get_param_value(name);
      const auto v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(name);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::validation, std::string("query parameter '") + name + "' is not an integer");
    }
  }

  static CriterionKind kind_param(const std::string& s) {
    try {
      return criterion_from_string(s);
    } catch (const Error&) {
      throw Error(ErrorCode::not_found, "unknown criterion '" + s + "'");
    }
  }

  void routes() {
    srv_.Get("/cases", guarded([this](const Req&, Res& res) {
      json out = json::array();
      for (const auto& id : store_.case_ids()) {
        const auto data = store_.case_data(id);
        const auto& a = store_.initial_analysis(id);
        json slides = json::array();
        for (const auto& s : data->manifest.slides)
          slides.push_back({{"slide_id", s.slide_id}, {"stain", to_string(s.stain)}, {"width_px", s.width_px},
                            {"height_px", s.height_px}, {"mpp", s.mpp}, {"levels", s.levels}});
        out.push_back({{"case_id", id}, {"suggested_grade", to_string(a.grade.grade)}, {"slides", slides}});
      }
      send_json(res, out);
    }));

    srv_.Get(R"(/cases/([^/]+)/grading)", guarded([this](const Req& req, Res& res) {
      const auto a = analysis_for(req.matches[1], req);
      auto j = grade_json(a.grade, a.snapshot);
      j["case_id"] = std::string(req.matches[1]);
      send_json(res, j);
    }));

    srv_.Get(R"(/cases/([^/]+)/regions)", guarded([this](const Req& req, Res& res) {
      const auto a = analysis_for(req.matches[1], req);
      send_json(res, json{{"case_id", std::string(req.matches[1])}, {"regions", a.regions}});
    }));

    srv_.Get(R"(/cases/([^/]+)/criteria/([^/]+)/evidence)", guarded([this](const Req& req, Res& res) {
      const auto k = kind_param(req.matches[2]);
      const auto a = analysis_for(req.matches[1], req);
      const auto it = a.evidence.find(k);
      send_json(res, json{{"criterion", to_string(k)},
                          {"evidence", it == a.evidence.end() ? json::array() : json(it->second)}});
    }));

    srv_.Get(R"(/cases/([^/]+)/criteria/([^/]+)/heatmap)", guarded([this](const Req& req, Res& res) {
      const std::string case_id = req.matches[1];
      const auto k = kind_param(req.matches[2]);
      if (k == CriterionKind::Subtype) throw Error(ErrorCode::not_found, "Subtype has no heatmap");
      const auto data = store_.case_data(case_id);
      const auto want = k == CriterionKind::Ki67Index ? Stain::KI67 : Stain::HE;
      const SlideMeta* meta = nullptr;
      if (req.has_param("slide")) {
        meta = data->manifest.find_slide(req.get_param_value("slide"));
      } else {
        for (const auto& s : data->manifest.slides)
          if (s.stain == want) {
            meta = &s;
            break;
          }
      }
      if (!meta || meta->stain != want) throw Error(ErrorCode::not_found, "no slide for that heatmap");
      const auto a = analysis_for(case_id, req);
      const auto h = render_heatmap(criterion_grid(*data, a.detections, k, *meta), std::string(to_string(k)));
      if (req.get_param_value("format") == "json") {
        json cells = json::array();
        for (int y = 0; y < h.raster.height; ++y) {
          json row = json::array();
          for (int x = 0; x < h.raster.width; ++x) row.push_back(h.raster.px(x, y)[0]);
          cells.push_back(row);
        }
        auto j = json(h.meta);
        j["pixels"] = cells;
        send_json(res, j);
        return;
      }
      res.set_header("X-Heatmap-Meta", json(h.meta).dump());
      const auto png = encode_png(h.raster);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    }));

    srv_.Post("/sessions", guarded([this](const Req& req, Res& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, std::string("malformed JSON: ") + e.what());
      }
      if (!body.is_object() || !body.contains("case_id") || !body.at("case_id").is_string())
        throw Error(ErrorCode::validation, "body needs a case_id");
      auto& s = store_.create_session(body.at("case_id").get<std::string>());
      send_json(res, s.to_json(), 201);
    }));

    srv_.Post(R"(/sessions/([^/]+)/actions)", guarded([this](const Req& req, Res& res) {
      auto& s = store_.session(req.matches[1]);
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, std::string("malformed JSON: ") + e.what());
      }
      auto [action, grade] = s.submit(action_from_request(body));
      const auto st = s.state();
      send_json(res, json{{"action", action}, {"grading", grade_json(grade, st.analysis.snapshot)}});
    }));

    srv_.Get(R"(/sessions/([^/]+))", guarded([this](const Req& req, Res& res) {
      send_json(res, store_.session(req.matches[1]).to_json());
    }));

    srv_.Get(R"(/slides/([^/]+)/tiles/(-?\d+)/(-?\d+)/(-?\d+))", guarded([this](const Req& req, Res& res) {
      const auto& s = slide(req.matches[1]);
      const auto level = std::stoll(req.matches[2]);
      const auto tx = std::stoll(req.matches[3]);
      const auto ty = std::stoll(req.matches[4]);
      if (level < 0 || level > 64 || !s.has_tile(static_cast<int>(level), tx, ty))
        throw Error(ErrorCode::not_found, "no tile at that pyramid address");
      const auto bytes = s.tile_bytes(static_cast<int>(level), tx, ty);
      res.set_header("Cache-Control", "public, max-age=31536000, immutable");
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    }));

    srv_.Get(R"(/slides/([^/]+)/region)", guarded([this](const Req& req, Res& res) {
      const auto& s = slide(req.matches[1]);
      const Rect r{int_param(req, "x"), int_param(req, "y"), int_param(req, "w"), int_param(req, "h")};
      const auto level = int_param(req, "level", 0);
      if (level < 0 || level >= s.meta().levels) throw Error(ErrorCode::out_of_range, "level out of range");
      const auto fp_w = level_dim(r.w, static_cast<int>(level));
      const auto fp_h = level_dim(r.h, static_cast<int>(level));
      if (fp_w > 4096 || fp_h > 4096) throw Error(ErrorCode::validation, "region too large for that level");
      const auto px = read_region(s, r, static_cast<int>(level));
      const auto png = encode_png(px);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    }));
  }

  SessionStore& store_;
  std::map<std::string, PyramidSlide> slides_;
  httplib::Server srv_;
};

}  // namespace meningrade
