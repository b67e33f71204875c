#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "ctxemo/corpus.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("ctxemo_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Dialogue whose utterances are the given texts, all labeled neutral unless labels are supplied.
inline ctxemo::Dialogue dialogue(const std::vector<std::string>& texts, const std::vector<ctxemo::EmotionLabel>& labels = {},
                                 const std::string& id = "d") {
    ctxemo::Dialogue d;
    d.dialogue_id = id;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        ctxemo::Utterance u;
        u.speaker = i % 2 ? "B" : "A";
        u.text = texts[i];
        u.gold_label = labels.empty() ? ctxemo::EmotionLabel::neutral : labels[i];
        d.utterances.push_back(u);
    }
    return d;
}

}  // namespace testutil
