// Records metadata fixtures (one file per query fingerprint) from a local
// corpus, so the engine can run fully offline against them.

#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "threadloom/doc_model.hpp"
#include "threadloom/embedding.hpp"
#include "threadloom/metadata_client.hpp"
#include "threadloom/tei_import.hpp"

namespace fs = std::filesystem;
using namespace threadloom;

int main(int argc, char** argv) {
    CLI::App app{"Record metadata fixtures from a corpus file"};
    std::string corpus_path, out_dir;
    std::vector<std::string> docs;
    std::size_t embed_dim = 16;
    bool clean = false;
    app.add_option("--corpus", corpus_path, "corpus JSON {papers, citations}")->required()->check(CLI::ExistingFile);
    app.add_option("--doc", docs, "parsed documents whose bibliography titles are looked up")->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "fixture directory")->required();
    app.add_option("--embed-dim", embed_dim, "dimension for synthesized embeddings (0: none)");
    app.add_flag("--clean", clean, "remove existing fixture files first");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto corpus = nlohmann::json::parse(*detail::read_file_if_exists(corpus_path));
        std::unique_ptr<HashingEmbedder> embedder;
        if (embed_dim > 0) embedder = std::make_unique<HashingEmbedder>(embed_dim);
        auto memory = MemoryBackend::from_corpus(corpus, embedder.get());

        if (clean && fs::exists(out_dir))
            for (const auto& e : fs::directory_iterator(out_dir))
                if (e.path().extension() == ".json") fs::remove(e.path());
        auto recording = std::make_shared<RecordingBackend>(memory, out_dir);
        MetadataClient client(recording);

        std::set<std::string> titles;
        for (const auto& [id, rec] : memory->papers()) {
            client.paper(id);
            client.citations_of(id, kMaxCitations);
            titles.insert(rec.title);
        }
        for (const auto& d : docs) {
            const ParsedDocument doc = ingest_any(*detail::read_file_if_exists(d));
            for (const auto& b : doc.bib_entries)
                if (b.title && !b.resolved_paper_id) titles.insert(*b.title);
        }
        for (const auto& t : titles) client.lookup_title(t);
        std::cerr << "recorded " << client.backend_requests() << " fixtures into " << out_dir << "\n";
    } catch (const Error& e) {
        std::cerr << e.code() << ": " << e.what() << "\n";
        return 2;
    }
    return 0;
}
