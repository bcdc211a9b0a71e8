#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spdp/alsm.hpp"
#include "spdp/corpus.hpp"
#include "spdp/features.hpp"
#include "spdp/fusion.hpp"
#include "spdp/optim.hpp"
#include "spdp/serial_path.hpp"

namespace spdp {

enum class Profile { DeskDims, PaperDims };
Profile parse_profile(const std::string& name);
const char* profile_name(Profile p);

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t epochs = 10;
    bool freeze_encoder = false;
    bool detach_alsm_inputs = false;
};

struct FilterConfig {
    FixtureSpec fixtures;
    double annotator_a_accuracy = 0.8;
    double annotator_b_accuracy = 0.8;
};

// Everything a command needs. Keys in the text form are "section.field";
// see README for the list.
struct RunConfig {
    Profile profile = Profile::DeskDims;
    std::uint64_t seed = 1;
    SerialConfig serial;
    AlsmConfig alsm;
    FusionConfig fusion;
    CorpusConfig corpus;
    AdamWConfig optim;
    TrainConfig train;
    FilterConfig filter;
    std::filesystem::path data_dir = "data";
    std::filesystem::path out_dir = "out";

    static RunConfig for_profile(Profile p);

    // Throws a usage error for unknown keys or unparsable values.
    void set(const std::string& key, const std::string& value);
    // "key = value" lines; '#' starts a comment.
    void apply_text(const std::string& text, const std::string& origin);
    void apply_file(const std::filesystem::path& path);
    std::string to_text() const;

    // Fills the dims that follow from others (feat_dim, emb dims, vocab size) and validates.
    void resolve(std::size_t vocab_size);

    static const std::vector<std::string>& keys();
};

// Profile from `profile_override`, else from a "profile" line in the file, else desk-dims;
// then file keys on top.
RunConfig load_run_config(const std::filesystem::path* file, const std::string& profile_override);

}  // namespace spdp
