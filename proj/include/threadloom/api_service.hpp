#pragma once

// Local HTTP interface over an Engine. Requests and responses are JSON
// envelopes tagged with a schema version; `ApiService::handle` is the whole
// adapter, and `mount` only forwards httplib traffic to it.

#include <atomic>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "threadloom/engine.hpp"

namespace threadloom {

inline constexpr const char* kApiSchema = "threadloom.v1";

// Wire encoding ----------------------------------------------------------------

inline nlohmann::ordered_json rects_json(const std::vector<PageRect>& rects) {
    auto a = nlohmann::ordered_json::array();
    for (const auto& r : rects) a.push_back(detail::ws::rect_json(r));
    return a;
}

inline nlohmann::ordered_json to_json(const FlatSuggestion& s) {
    return {{"thread_id", s.thread_id},
            {"label", s.label},
            {"similarity", s.similarity},
            {"objective", s.objective},
            {"chain_rank", s.chain_rank}};
}

inline nlohmann::ordered_json to_json(const std::vector<FlatSuggestion>& v) {
    auto a = nlohmann::ordered_json::array();
    for (const auto& s : v) a.push_back(to_json(s));
    return a;
}

inline nlohmann::ordered_json to_json(const DrawerEntry& e) {
    nlohmann::ordered_json j{{"thread_id", e.thread_id},
                             {"label", e.label},
                             {"depth", e.depth},
                             {"nested_items", e.nested_items},
                             {"clip_count", e.clip_count}};
    j["papers"] = nlohmann::ordered_json::array();
    for (const auto& p : e.papers) {
        auto pj = to_json(p.paper);
        pj["current"] = p.current;
        j["papers"].push_back(std::move(pj));
    }
    return j;
}

inline nlohmann::ordered_json to_json(const std::vector<DrawerEntry>& drawer) {
    auto a = nlohmann::ordered_json::array();
    for (const auto& e : drawer) a.push_back(to_json(e));
    return a;
}

inline nlohmann::ordered_json to_json(const CommitResult& r) {
    nlohmann::ordered_json j{{"thread_id", r.thread_id}};
    j["clip_id"] = r.clip_id ? nlohmann::ordered_json(*r.clip_id) : nlohmann::ordered_json(nullptr);
    j["papers_added"] = r.papers_added;
    j["duplicates"] = r.duplicates;
    j["skipped"] = r.skipped;
    return j;
}

inline nlohmann::ordered_json to_json(const HighlightResult& r) {
    return {{"tank", to_json(r.tank)}, {"viewport_rects", rects_json(r.viewport_rects)}, {"suggestions", to_json(r.suggestions)}};
}

inline nlohmann::ordered_json workspace_view(const Workspace& ws) {
    nlohmann::ordered_json j{{"workspace_id", ws.workspace_id}};
    j["current_paper"] = ws.current_paper ? nlohmann::ordered_json(*ws.current_paper) : nlohmann::ordered_json(nullptr);
    j["drawer"] = to_json(drawer_view(ws));
    j["tank"] = to_json(ws.tank);
    return j;
}

namespace detail::wire {

using nlohmann::json;

inline const json& field(const json& j, const char* name) {
    if (!j.is_object() || !j.contains(name)) throw SchemaError(std::string("missing field ") + name);
    return j[name];
}

inline std::string string_field(const json& j, const char* name) {
    const auto& v = field(j, name);
    if (!v.is_string()) throw SchemaError(std::string(name) + " must be a string");
    return v.get<std::string>();
}

inline std::optional<std::string> optional_string(const json& j, const char* name) {
    if (!j.is_object() || !j.contains(name) || j[name].is_null()) return std::nullopt;
    if (!j[name].is_string()) throw SchemaError(std::string(name) + " must be a string");
    return j[name].get<std::string>();
}

inline PageRect rect_from(const json& j) {
    if (!j.is_array() || j.size() != 5) throw SchemaError("rect must be [page, x, y, w, h]");
    for (std::size_t i = 0; i < 5; ++i)
        if (!j[i].is_number()) throw SchemaError("rect entries must be numbers");
    if (!j[0].is_number_unsigned()) throw SchemaError("rect page must be a non-negative integer");
    return {j[0].get<std::size_t>(), Rect{j[1].get<double>(), j[2].get<double>(), j[3].get<double>(), j[4].get<double>()}};
}

inline std::vector<PageRect> rects_from(const json& j) {
    if (!j.is_array()) throw SchemaError("rects must be an array");
    std::vector<PageRect> out;
    for (const auto& r : j) out.push_back(rect_from(r));
    return out;
}

// {render_scale, page_offsets: [[dx, dy]...]}; absent means identity over
// `pages` pages.
inline ViewportTransform transform_from(const json& payload, std::size_t pages) {
    if (!payload.contains("transform") || payload["transform"].is_null()) return ViewportTransform::uniform(1.0, pages);
    const auto& t = payload["transform"];
    ViewportTransform out;
    if (t.contains("render_scale")) {
        if (!t["render_scale"].is_number()) throw SchemaError("render_scale must be a number");
        out.render_scale = t["render_scale"].get<double>();
    }
    if (t.contains("page_offsets")) {
        if (!t["page_offsets"].is_array()) throw SchemaError("page_offsets must be an array");
        for (const auto& o : t["page_offsets"]) {
            if (!o.is_array() || o.size() != 2 || !o[0].is_number() || !o[1].is_number())
                throw SchemaError("page offset must be [dx, dy]");
            out.page_offsets.push_back({o[0].get<double>(), o[1].get<double>()});
        }
    } else {
        out.page_offsets.resize(pages);
    }
    return out;
}

inline HighlightKind kind_from(const json& payload) {
    const auto k = optional_string(payload, "kind").value_or("TEXT");
    if (k == "TEXT") return HighlightKind::Text;
    if (k == "AREA") return HighlightKind::Area;
    throw SchemaError("kind must be TEXT or AREA");
}

inline std::optional<std::uint64_t> revision_from(const json& envelope) {
    if (!envelope.contains("expected_revision") || envelope["expected_revision"].is_null()) return std::nullopt;
    if (!envelope["expected_revision"].is_number_unsigned()) throw SchemaError("expected_revision must be a non-negative integer");
    return envelope["expected_revision"].get<std::uint64_t>();
}

inline std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : path) {
        if (c == '/') {
            if (!cur.empty()) parts.push_back(httplib::detail::decode_url(cur, false));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) parts.push_back(httplib::detail::decode_url(cur, false));
    return parts;
}

}  // namespace detail::wire

// HTTP status for an engine error code.
inline int http_status(const std::string& code) {
    static const std::map<std::string, int> table = {
        {"CONFLICT", 409},          {"CONFIRMATION_REQUIRED", 409}, {"NO_SUCH_DOCUMENT", 404},
        {"NO_SUCH_THREAD", 404},    {"NO_SUCH_PAPER", 404},         {"NO_SUCH_CLIP", 404},
        {"NOT_FOUND", 404},         {"NO_SUCH_ROUTE", 404},         {"METHOD_NOT_ALLOWED", 405},
        {"PAYLOAD_TOO_LARGE", 413}, {"RATE_LIMITED", 429},          {"NETWORK_ERROR", 502},
        {"FIXTURE_MISS", 500},      {"STORAGE_ERROR", 500},         {"INTERNAL", 500},
    };
    auto it = table.find(code);
    return it == table.end() ? 422 : it->second;
}

class ApiService {
public:
    struct Request {
        std::string method;
        std::string path;
        std::string body;
        std::map<std::string, std::string> query;
    };

    struct Response {
        int status = 200;
        std::string body;
        nlohmann::json json() const { return nlohmann::json::parse(body); }
    };

    explicit ApiService(Engine& engine) : engine_(engine) {}

    Response handle(const Request& req) {
        nlohmann::json envelope = nlohmann::json::object();
        std::string request_id;
        try {
            if (!req.body.empty()) {
                envelope = nlohmann::json::parse(req.body, nullptr, false);
                if (envelope.is_discarded() || !envelope.is_object()) throw SchemaError("body is not a JSON object");
                if (!envelope.contains("schema") || envelope["schema"] != kApiSchema)
                    throw SchemaError(std::string("schema must be ") + kApiSchema);
            }
            request_id = detail::wire::optional_string(envelope, "request_id").value_or("");
            if (request_id.empty()) request_id = "req-" + std::to_string(++next_request_);
            const nlohmann::json payload = envelope.contains("payload") ? envelope["payload"] : nlohmann::json::object();
            if (!payload.is_object()) throw SchemaError("payload must be an object");
            const auto expected = detail::wire::revision_from(envelope);
            auto [revision, out] = route(req, detail::wire::split_path(req.path), payload, expected);
            nlohmann::ordered_json j{{"schema", kApiSchema}, {"request_id", request_id}, {"revision", revision}};
            j["payload"] = std::move(out);
            return {200, j.dump()};
        } catch (const Error& e) {
            return error(request_id, e.code(), e.what());
        } catch (const nlohmann::json::exception& e) {
            return error(request_id, "SCHEMA_ERROR", e.what());
        } catch (const std::exception& e) {
            return error(request_id, "INTERNAL", e.what());
        }
    }

    // Convenience for callers without HTTP: wraps `payload` in an envelope.
    Response call(const std::string& method, const std::string& path, const nlohmann::json& payload = nullptr,
                  std::optional<std::uint64_t> expected_revision = std::nullopt) {
        Request req{method, path, "", {}};
        if (!payload.is_null() || expected_revision) {
            nlohmann::json env{{"schema", kApiSchema}, {"payload", payload.is_null() ? nlohmann::json::object() : payload}};
            if (expected_revision) env["expected_revision"] = *expected_revision;
            req.body = env.dump();
        }
        return handle(req);
    }

    void mount(httplib::Server& server) {
        auto forward = [this](const httplib::Request& hreq, httplib::Response& hres) {
            Request req{hreq.method, hreq.path, hreq.body, {}};
            for (const auto& [k, v] : hreq.params) req.query[k] = v;
            const Response r = handle(req);
            hres.status = r.status;
            hres.set_content(r.body, "application/json");
        };
        server.Get(R"(/.*)", forward);
        server.Post(R"(/.*)", forward);
        server.Patch(R"(/.*)", forward);
        server.Delete(R"(/.*)", forward);
    }

private:
    using Payload = nlohmann::json;
    using Out = nlohmann::ordered_json;
    using Rev = std::optional<std::uint64_t>;
    using Result = std::pair<std::uint64_t, Out>;

    Response error(const std::string& request_id, const std::string& code, const std::string& message) {
        nlohmann::ordered_json j{{"schema", kApiSchema}, {"request_id", request_id}};
        j["revision"] = engine_.snapshot()->revision;
        j["error"] = {{"code", code}, {"message", message}};
        return {http_status(code), j.dump()};
    }

    // Runs a mutation and reports the revision it produced. Mutations through
    // the service are serialized so that revision is exactly theirs.
    template <class F>
    Result mutation(F&& f) {
        std::lock_guard lock(mutate_mu_);
        Out out = f();
        return {engine_.snapshot()->revision, std::move(out)};
    }

    Result read(Out out) { return {engine_.snapshot()->revision, std::move(out)}; }

    Out drawer() { return to_json(engine_.drawer()); }

    Result route(const Request& req, const std::vector<std::string>& p, const Payload& payload, Rev expected) {
        using namespace detail::wire;
        const std::string& m = req.method;
        const std::size_t n = p.size();
        auto is = [&](std::initializer_list<const char*> segs) {
            if (segs.size() != n) return false;
            std::size_t i = 0;
            for (const char* s : segs) {
                if (*s != '*' && p[i] != s) return false;
                ++i;
            }
            return true;
        };
        auto method = [&](const char* want) {
            if (m != want) throw Error("METHOD_NOT_ALLOWED", m + " not allowed on " + req.path);
        };

        if (is({"documents"})) {
            if (m == "GET") return read(Out(engine_.documents()));
            method("POST");
            std::string raw;
            if (payload.contains("content")) raw = string_field(payload, "content");
            else raw = field(payload, "document").dump();
            return mutation([&] {
                auto r = engine_.ingest(raw, expected);
                return Out{{"doc_id", r.doc_id}, {"cached", r.cached}, {"merged_sentences", r.merged}, {"drawer", drawer()}};
            });
        }
        if (is({"documents", "*"})) {
            method("GET");
            return read(to_json(*engine_.document(p[1])));
        }
        if (is({"documents", "*", "open"})) {
            method("POST");
            return mutation([&] {
                auto r = engine_.open_document(p[1], expected);
                return Out{{"added", r.added}, {"identity", r.identity}, {"drawer", drawer()}};
            });
        }
        if (is({"highlights"})) {
            method("POST");
            Highlight h;
            h.doc_id = string_field(payload, "doc_id");
            h.kind = kind_from(payload);
            h.rects = rects_from(field(payload, "rects"));
            const auto t = transform_from(payload, engine_.document(h.doc_id)->pages.size());
            return mutation([&] {
                if (h.kind == HighlightKind::Area) {
                    auto bytes = base64_decode(string_field(payload, "image_base64"));
                    if (!bytes) throw SchemaError("image_base64 is not valid base64");
                    return to_json(engine_.highlight_area(h, t, std::move(*bytes), expected));
                }
                return to_json(engine_.highlight(h, t, expected));
            });
        }
        if (is({"tank"})) {
            method("GET");
            return read(to_json(engine_.tank_state()));
        }
        if (is({"tank", "commit"})) {
            method("POST");
            const auto mode = commit_mode_from_string(string_field(payload, "mode"));
            return mutation([&] {
                auto r = engine_.commit(mode, optional_string(payload, "target"), optional_string(payload, "label"), expected);
                return Out{{"result", to_json(r)}, {"drawer", drawer()}};
            });
        }
        if (is({"tank", "deselect"}) || is({"tank", "reselect"})) {
            method("POST");
            const auto key = string_field(payload, "key");
            return mutation([&] {
                if (p[1] == "deselect") engine_.tank_deselect(key, expected);
                else engine_.tank_reselect(key, expected);
                return to_json(engine_.tank_state());
            });
        }
        if (is({"tank", "clear"})) {
            method("POST");
            return mutation([&] {
                engine_.tank_clear(expected);
                return to_json(engine_.tank_state());
            });
        }
        if (is({"workspace"})) {
            method("GET");
            return read(workspace_view(*engine_.snapshot()));
        }
        if (is({"suggest"})) {
            method("POST");
            std::size_t k = kDefaultSuggestions;
            if (payload.contains("k")) k = payload["k"].get<std::size_t>();
            return read(to_json(engine_.suggest(string_field(payload, "text"), k)));
        }
        if (is({"threads"})) {
            method("POST");
            const auto label = string_field(payload, "label");
            return mutation([&] {
                auto id = engine_.create_thread(label, optional_string(payload, "parent"), expected);
                return Out{{"thread_id", id}, {"drawer", drawer()}};
            });
        }
        if (is({"threads", "*"})) {
            if (m == "PATCH") {
                const auto label = string_field(payload, "label");
                return mutation([&] {
                    engine_.rename_thread(p[1], label, expected);
                    return Out{{"drawer", drawer()}};
                });
            }
            method("DELETE");
            bool confirm = payload.value("confirm", false);
            if (auto it = req.query.find("confirm"); it != req.query.end()) confirm = it->second == "true" || it->second == "1";
            return mutation([&] {
                engine_.delete_thread(p[1], confirm, expected);
                return Out{{"drawer", drawer()}};
            });
        }
        if (is({"threads", "*", "move"})) {
            method("POST");
            std::optional<std::size_t> position;
            if (payload.contains("position") && !payload["position"].is_null()) position = payload["position"].get<std::size_t>();
            return mutation([&] {
                engine_.move_thread(p[1], optional_string(payload, "parent"), position, expected);
                return Out{{"drawer", drawer()}};
            });
        }
        if (is({"threads", "*", "papers"})) {
            method("POST");
            const auto paper_id = string_field(payload, "paper_id");
            return mutation([&] {
                auto added = engine_.add_to_thread(p[1], paper_id, expected);
                return Out{{"paper", to_json(added)}, {"drawer", drawer()}};
            });
        }
        if (is({"threads", "*", "papers", "*"})) {
            method("DELETE");
            return mutation([&] {
                engine_.remove_paper(p[1], p[3], expected);
                return Out{{"drawer", drawer()}};
            });
        }
        if (is({"threads", "*", "overview"})) {
            method("GET");
            auto ov = engine_.overview(p[1]);
            const auto rev = ov.revision;
            return {rev, to_json(ov)};
        }
        if (is({"threads", "*", "export"})) {
            method("GET");
            return read(Out{{"format", "outline"}, {"text", engine_.export_outline(p[1])}});
        }
        if (is({"threads", "*", "recommendations"})) {
            method("GET");
            auto set = engine_.recommendations(p[1]);
            return {set.revision, to_json(set)};
        }
        if (is({"threads", "*", "recommendations", "refresh"})) {
            method("POST");
            auto set = engine_.refresh_recommendations(p[1]);
            return {set.revision, to_json(set)};
        }
        if (is({"papers", "move"})) {
            method("POST");
            const auto paper_id = string_field(payload, "paper_id");
            const auto from = string_field(payload, "from");
            const auto to = string_field(payload, "to");
            return mutation([&] {
                engine_.move_paper(paper_id, from, to, expected);
                return Out{{"drawer", drawer()}};
            });
        }
        if (is({"clips", "*"})) {
            if (m == "PATCH") {
                const auto text = string_field(payload, "text");
                return mutation([&] {
                    engine_.edit_clip(p[1], text, expected);
                    return Out{{"drawer", drawer()}};
                });
            }
            method("DELETE");
            return mutation([&] {
                engine_.delete_clip(p[1], expected);
                return Out{{"drawer", drawer()}};
            });
        }
        throw Error("NO_SUCH_ROUTE", "no route " + m + " " + req.path);
    }

    static std::optional<std::string> base64_decode(const std::string& s) { return detail::base64_decode(s); }

    Engine& engine_;
    std::mutex mutate_mu_;
    std::atomic<std::uint64_t> next_request_{0};
};

// Service settings, from a JSON config file and/or flags.
struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8765;

    // {"host", "port", "home", "fixtures", "rate_limit"}; absent keys keep
    // their current values.
    static void apply_file(const std::filesystem::path& path, ServiceConfig& service, EngineConfig& engine) {
        auto bytes = detail::read_file_if_exists(path);
        if (!bytes) throw InvalidArgument("config file not found: " + path.string());
        auto j = nlohmann::json::parse(*bytes, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw SchemaError("config file is not a JSON object");
        if (j.contains("host")) service.host = j["host"].get<std::string>();
        if (j.contains("port")) service.port = j["port"].get<int>();
        if (j.contains("home")) engine.home = j["home"].get<std::string>();
        if (j.contains("fixtures")) engine.fixtures = j["fixtures"].get<std::string>();
        if (j.contains("rate_limit")) engine.rate_limit = j["rate_limit"].get<double>();
    }
};

}  // namespace threadloom
