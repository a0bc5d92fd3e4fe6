#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xbench/engine.hpp"
#include "xbench/image.hpp"
#include "xbench/log.hpp"

namespace xbench {

struct CorpusEntry {
    std::string id;
    Image image;
    std::size_t label = 0;
    bool correct = false; // set by filter_correct
};

struct Corpus {
    std::vector<CorpusEntry> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
};

/// Reads `labels.txt` (lines "<file> <class>", '#' comments) from `dir` and decodes each PNG.
/// Entries whose dimensions differ from `height` x `width` are skipped with a warning.
inline Corpus load_corpus(const std::filesystem::path& dir, std::size_t height, std::size_t width) {
    const auto index = dir / "labels.txt";
    std::ifstream in(index);
    if (!in) throw IoError(fmt::format("cannot read corpus index '{}'", index.string()));
    Corpus corpus;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string file;
        long long label = -1;
        if (!(ls >> file >> label) || label < 0)
            throw IoError(fmt::format("{}:{}: expected '<file> <class>'", index.string(), line_no));
        CorpusEntry e;
        e.id = std::filesystem::path(file).stem().string();
        e.label = static_cast<std::size_t>(label);
        if (!seen.insert(e.id).second)
            throw IoError(fmt::format("{}:{}: duplicate image id '{}'", index.string(), line_no, e.id));
        e.image = read_png(dir / file);
        if (e.image.height != height || e.image.width != width) {
            log().warn("corpus entry '{}' is {}x{}, expected {}x{}; skipped", e.id, e.image.height,
                       e.image.width, height, width);
            continue;
        }
        corpus.entries.push_back(std::move(e));
    }
    if (corpus.empty())
        throw IoError(fmt::format("corpus '{}' has no usable entries", dir.string()));
    std::sort(corpus.entries.begin(), corpus.entries.end(),
              [](const CorpusEntry& a, const CorpusEntry& b) { return a.id < b.id; });
    return corpus;
}

/// Writes `corpus` as PNGs plus `labels.txt` in the layout `load_corpus` reads.
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir / "labels.txt");
    if (!index) throw IoError(fmt::format("cannot write '{}'", (dir / "labels.txt").string()));
    for (const auto& e : corpus.entries) {
        write_png(dir / (e.id + ".png"), e.image);
        index << e.id << ".png " << e.label << '\n';
    }
}

struct FilterSummary {
    std::size_t kept = 0;
    std::size_t total = 0;
};

/// Keeps entries the model classifies correctly (arg-max equals the label).
inline Corpus filter_correct(const ModelGraph& model, const Corpus& corpus,
                             FilterSummary* summary = nullptr) {
    Corpus kept;
    for (const auto& e : corpus.entries) {
        if (predict(model, e.image) == e.label) {
            auto copy = e;
            copy.correct = true;
            kept.entries.push_back(std::move(copy));
        }
    }
    if (summary) *summary = {kept.size(), corpus.size()};
    log().info("kept {}/{} correctly classified images", kept.size(), corpus.size());
    return kept;
}

} // namespace xbench
