// Command-line front end: each subcommand is one engine operation against the
// workspace under THREADLOOM_HOME (or --home).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "threadloom/api_service.hpp"
#include "threadloom/engine.hpp"

namespace fs = std::filesystem;
using namespace threadloom;
using ojson = nlohmann::ordered_json;

namespace {

struct Globals {
    std::string home;
    std::string fixtures;
    std::string output = "text";
    std::optional<std::uint64_t> expect_revision;
};

std::string read_input(const std::string& path) {
    if (path == "-") {
        std::ostringstream s;
        s << std::cin.rdbuf();
        return s.str();
    }
    auto bytes = detail::read_file_if_exists(path);
    if (!bytes) throw InvalidArgument("cannot read " + path);
    return *bytes;
}

Rect parse_rect(const std::string& s) {
    std::vector<double> v;
    std::stringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw InvalidArgument("rect must be x,y,w,h: " + s);
        }
    }
    if (v.size() != 4) throw InvalidArgument("rect must be x,y,w,h: " + s);
    return {v[0], v[1], v[2], v[3]};
}

std::string year_suffix(int year) { return year ? " (" + std::to_string(year) + ")" : ""; }

void print_tank(const HoldingTank& tank) {
    if (tank.empty()) {
        std::cout << "tank is empty\n";
        return;
    }
    if (tank.context) {
        std::cout << "context " << tank.context_id << ": " << tank.context->text << "\n";
        for (const auto& r : tank.context->resolved) {
            std::cout << "  [" << (tank.selected.count(r.key()) ? 'x' : ' ') << "] " << r.key() << "  "
                      << r.marker.surface;
            if (r.paper) std::cout << "  " << r.paper->title << year_suffix(r.paper->year);
            else if (r.bib) std::cout << "  " << r.bib->title.value_or(r.bib->raw_text) << " (unresolved)";
            if (r.reason) std::cout << "  " << *r.reason;
            std::cout << "\n";
        }
    }
    if (tank.image)
        std::cout << "image " << tank.image->mime << " from " << tank.image->doc_id << " page " << tank.image->page << "\n";
}

void print_suggestions(const std::vector<FlatSuggestion>& suggestions) {
    for (const auto& s : suggestions)
        std::cout << std::left << std::setw(8) << s.thread_id << " " << s.label << "  " << std::fixed
                  << std::setprecision(3) << s.similarity << "\n";
}

void print_drawer(const std::vector<DrawerEntry>& drawer) {
    for (const auto& e : drawer) {
        const std::string pad(e.depth * 2, ' ');
        std::cout << pad << e.thread_id << "  " << e.label << "  (" << e.nested_items << " items";
        if (e.clip_count) std::cout << ", " << e.clip_count << (e.clip_count == 1 ? " clip" : " clips");
        std::cout << ")\n";
        for (const auto& p : e.papers)
            std::cout << pad << "    - " << p.paper.title << year_suffix(p.paper.year) << "  " << p.paper.paper_id
                      << (p.current ? "  [current]" : "") << "\n";
    }
}

void print_recommendations(const RecommendationSet& set) {
    std::cout << "revision " << set.revision << ", " << set.references.size() << " references\n";
    for (const auto& r : set.items)
        std::cout << std::setw(3) << r.rank << ". " << r.candidate.title << year_suffix(r.candidate.year) << "  "
                  << r.candidate.paper_id << "  covers " << r.coverage.count << "\n";
    for (const auto& w : set.warnings) std::cerr << "warning: " << w << "\n";
}

class Cli {
public:
    Cli(Globals g, Engine& engine) : g_(std::move(g)), engine_(engine) {}

    bool json() const { return g_.output == "json"; }
    ThreadStore::Rev rev() const { return g_.expect_revision; }

    void emit(ojson result) const {
        if (!json()) return;
        ojson j{{"revision", engine_.snapshot()->revision}};
        j["result"] = std::move(result);
        std::cout << j.dump(2) << "\n";
    }

    Globals g_;
    Engine& engine_;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"threadloom: citation-aware reading notes"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--home", g.home, "workspace root (default: $THREADLOOM_HOME or ./.threadloom)");
    app.add_option("--fixtures", g.fixtures, "metadata fixture directory; runs offline");
    app.add_option("--output", g.output, "text or json")->check(CLI::IsMember({"text", "json"}));
    app.add_option("--expect-revision", g.expect_revision, "reject the change unless the workspace is at this revision");

    std::string ingest_file;
    auto* ingest = app.add_subcommand("ingest", "store a parsed document and open it");
    ingest->add_option("file", ingest_file, "native JSON parse or TEI XML ('-' for stdin)")->required();

    std::string extract_doc, extract_image;
    std::size_t extract_page = 0;
    std::vector<std::string> extract_rects;
    auto* extract = app.add_subcommand("extract", "highlight a region and load the holding tank");
    extract->add_option("doc_id", extract_doc)->required();
    extract->add_option("--page", extract_page, "0-based page")->required();
    extract->add_option("--rect", extract_rects, "x,y,w,h in document points; repeatable")->required();
    extract->add_option("--image", extract_image, "capture this image file as an area highlight");

    auto* tank = app.add_subcommand("tank", "holding tank");
    tank->require_subcommand(1);
    auto* tank_show = tank->add_subcommand("show", "show the tank");
    std::string commit_new, commit_refs, commit_clip;
    auto* tank_commit = tank->add_subcommand("commit", "file the tank contents");
    auto* o_new = tank_commit->add_option("--new", commit_new, "new thread with this label (empty: derived)");
    auto* o_refs = tank_commit->add_option("--refs-to", commit_refs, "add the selected references to a thread");
    auto* o_clip = tank_commit->add_option("--clip-to", commit_clip, "add the clip and references to a thread");
    o_new->excludes(o_refs)->excludes(o_clip);
    o_refs->excludes(o_clip);
    std::string tank_key;
    auto* tank_deselect = tank->add_subcommand("deselect", "drop a reference from the commit");
    tank_deselect->add_option("key", tank_key)->required();
    auto* tank_reselect = tank->add_subcommand("reselect", "restore a dropped reference");
    tank_reselect->add_option("key", tank_key)->required();
    auto* tank_clear = tank->add_subcommand("clear", "empty the tank");

    auto* thread = app.add_subcommand("thread", "threads");
    thread->require_subcommand(1);
    auto* thread_ls = thread->add_subcommand("ls", "list the drawer");
    std::string new_label, new_parent;
    auto* thread_new = thread->add_subcommand("new", "create a thread");
    thread_new->add_option("label", new_label)->required();
    thread_new->add_option("--parent", new_parent);
    std::string mv_id, mv_parent;
    bool mv_top = false;
    std::optional<std::size_t> mv_position;
    auto* thread_mv = thread->add_subcommand("mv", "nest a thread under another, or back to the top level");
    thread_mv->add_option("thread_id", mv_id)->required();
    auto* o_parent = thread_mv->add_option("--parent", mv_parent);
    auto* o_top = thread_mv->add_flag("--top", mv_top, "move to the top level");
    o_parent->excludes(o_top);
    thread_mv->add_option("--position", mv_position, "index among the new siblings");
    std::string rm_id;
    bool rm_confirm = false;
    auto* thread_rm = thread->add_subcommand("rm", "delete a thread");
    thread_rm->add_option("thread_id", rm_id)->required();
    thread_rm->add_flag("--confirm", rm_confirm, "also delete nested threads");
    std::string rename_id, rename_label;
    auto* thread_rename = thread->add_subcommand("rename", "rename a thread");
    thread_rename->add_option("thread_id", rename_id)->required();
    thread_rename->add_option("label", rename_label)->required();
    std::string add_thread, add_paper;
    auto* thread_add = thread->add_subcommand("add", "add a paper (e.g. a recommendation) to a thread");
    thread_add->add_option("thread_id", add_thread)->required();
    thread_add->add_option("paper_id", add_paper)->required();

    std::string suggest_text;
    std::size_t suggest_k = kDefaultSuggestions;
    auto* suggest = app.add_subcommand("suggest", "rank threads for a text");
    suggest->add_option("text", suggest_text)->required();
    suggest->add_option("-k", suggest_k, "number of suggestions");

    std::string rec_thread;
    bool rec_refresh = false;
    auto* recommend = app.add_subcommand("recommend", "papers citing the thread's references");
    recommend->add_option("thread_id", rec_thread)->required();
    recommend->add_flag("--refresh", rec_refresh, "recompute from the metadata service");

    std::string ov_thread;
    bool ov_refresh = false;
    auto* overview = app.add_subcommand("overview", "thread overview with grouped references");
    overview->add_option("thread_id", ov_thread)->required();
    overview->add_flag("--refresh", ov_refresh, "recompute recommendations first");

    std::string export_thread, export_format = "outline";
    auto* exportc = app.add_subcommand("export", "export a thread");
    exportc->add_option("thread_id", export_thread);
    exportc->add_option("--format", export_format)->check(CLI::IsMember({"outline"}));

    ServiceConfig service;
    std::string config_file;
    auto* serve = app.add_subcommand("serve", "run the local HTTP service");
    serve->add_option("--config", config_file, "JSON config {host, port, home, fixtures, rate_limit}");
    auto* o_host = serve->add_option("--host", service.host, "bind address");
    auto* o_port = serve->add_option("--port", service.port);

    CLI11_PARSE(app, argc, argv);

    try {
        EngineConfig config = EngineConfig::from_env();
        if (!config_file.empty()) {
            ServiceConfig from_file;
            ServiceConfig::apply_file(config_file, from_file, config);
            if (!*o_host) service.host = from_file.host;
            if (!*o_port) service.port = from_file.port;
        }
        if (!g.home.empty()) config.home = g.home;
        if (!g.fixtures.empty()) config.fixtures = g.fixtures;
        Engine engine(config);
        Cli cli(g, engine);
        const auto rev = cli.rev();
        const bool text = !cli.json();

        if (*ingest) {
            auto r = engine.ingest(read_input(ingest_file), rev);
            if (text) std::cout << r.doc_id << (r.cached ? " (cached)" : "") << "\n";
            cli.emit({{"doc_id", r.doc_id}, {"cached", r.cached}, {"merged_sentences", r.merged}});
        } else if (*extract) {
            Highlight h;
            h.doc_id = extract_doc;
            for (const auto& r : extract_rects) h.rects.push_back({extract_page, parse_rect(r)});
            const auto pages = engine.document(extract_doc)->pages.size();
            const auto t = ViewportTransform::uniform(1.0, pages);
            HighlightResult r;
            if (!extract_image.empty()) {
                h.kind = HighlightKind::Area;
                r = engine.highlight_area(h, t, read_input(extract_image), rev);
            } else {
                r = engine.highlight(h, t, rev);
            }
            if (text) {
                print_tank(r.tank);
                if (!r.suggestions.empty()) std::cout << "suggested threads:\n";
                print_suggestions(r.suggestions);
            }
            cli.emit(to_json(r));
        } else if (*tank_show) {
            auto r = engine.tank_state();
            if (text) print_tank(r.tank);
            cli.emit(to_json(r));
        } else if (*tank_commit) {
            CommitResult r;
            if (*o_new) r = engine.commit(CommitMode::NewThread, std::nullopt, commit_new, rev);
            else if (*o_refs) r = engine.commit(CommitMode::RefsTo, commit_refs, std::nullopt, rev);
            else if (*o_clip) r = engine.commit(CommitMode::ClipTo, commit_clip, std::nullopt, rev);
            else throw InvalidArgument("tank commit needs --new, --refs-to or --clip-to");
            if (text) {
                std::cout << "filed into " << r.thread_id << ": " << r.papers_added << " papers";
                if (r.clip_id) std::cout << ", clip " << *r.clip_id;
                if (r.duplicates) std::cout << ", " << r.duplicates << " already there";
                std::cout << "\n";
                for (const auto& k : r.skipped) std::cout << "skipped " << k << "\n";
            }
            cli.emit(to_json(r));
        } else if (*tank_deselect || *tank_reselect) {
            if (*tank_deselect) engine.tank_deselect(tank_key, rev);
            else engine.tank_reselect(tank_key, rev);
            auto r = engine.tank_state();
            if (text) print_tank(r.tank);
            cli.emit(to_json(r));
        } else if (*tank_clear) {
            engine.tank_clear(rev);
            cli.emit(nullptr);
        } else if (*thread_ls) {
            auto d = engine.drawer();
            if (text) print_drawer(d);
            cli.emit(to_json(d));
        } else if (*thread_new) {
            auto id = engine.create_thread(new_label, new_parent.empty() ? std::nullopt : std::optional(new_parent), rev);
            if (text) std::cout << id << "\n";
            cli.emit({{"thread_id", id}});
        } else if (*thread_mv) {
            if (!*o_parent && !mv_top) throw InvalidArgument("thread mv needs --parent or --top");
            engine.move_thread(mv_id, mv_top ? std::nullopt : std::optional(mv_parent), mv_position, rev);
            cli.emit(to_json(engine.drawer()));
        } else if (*thread_rm) {
            engine.delete_thread(rm_id, rm_confirm, rev);
            cli.emit(to_json(engine.drawer()));
        } else if (*thread_rename) {
            engine.rename_thread(rename_id, rename_label, rev);
            cli.emit(to_json(engine.drawer()));
        } else if (*thread_add) {
            auto p = engine.add_to_thread(add_thread, add_paper, rev);
            if (text) std::cout << "added " << p.title << year_suffix(p.year) << " to " << add_thread << "\n";
            cli.emit(to_json(p));
        } else if (*suggest) {
            auto s = engine.suggest(suggest_text, suggest_k);
            if (text) print_suggestions(s);
            cli.emit(to_json(s));
        } else if (*recommend) {
            auto set = rec_refresh ? engine.refresh_recommendations(rec_thread) : engine.recommendations(rec_thread);
            if (text) print_recommendations(set);
            cli.emit(to_json(set));
        } else if (*overview) {
            if (ov_refresh) engine.refresh_recommendations(ov_thread);
            auto ov = engine.overview(ov_thread);
            if (text) std::cout << render_overview(ov);
            cli.emit(to_json(ov));
        } else if (*exportc) {
            auto out = engine.export_outline(export_thread.empty() ? std::nullopt : std::optional(export_thread));
            if (text) std::cout << out;
            cli.emit({{"format", export_format}, {"text", out}});
        } else if (*serve) {
            httplib::Server server;
            ApiService api(engine);
            api.mount(server);
            std::cerr << "listening on http://" << service.host << ":" << service.port << "\n";
            if (!server.listen(service.host, service.port)) throw NetworkError("cannot bind " + service.host);
        }
        return 0;
    } catch (const Error& e) {
        if (g.output == "json") std::cout << ojson{{"error", {{"code", e.code()}, {"message", e.what()}}}}.dump(2) << "\n";
        std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        if (g.output == "json") std::cout << ojson{{"error", {{"code", "INTERNAL"}, {"message", e.what()}}}}.dump(2) << "\n";
        std::cerr << "error: INTERNAL: " << e.what() << "\n";
        return 1;
    }
}
