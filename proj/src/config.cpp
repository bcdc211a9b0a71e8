#include "spdp/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "spdp/error.hpp"

namespace spdp {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    require(ec == std::errc() && ptr == v.data() + v.size(), "bad integer for " + key + ": '" + v + "'", ErrorKind::Usage);
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        require(used == v.size(), "bad number for " + key + ": '" + v + "'", ErrorKind::Usage);
        return d;
    } catch (const std::logic_error&) {
        fail(ErrorKind::Usage, "bad number for " + key + ": '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorKind::Usage, "bad boolean for " + key + ": '" + v + "'");
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }

std::string fmt_list(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

struct Field {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(name, member) \
    {name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_size(k, v); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }}}
#define REAL_FIELD(name, member) \
    {name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }, \
            [](const RunConfig& c) { return fmt(c.member); }}}
#define BOOL_FIELD(name, member) \
    {name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }, \
            [](const RunConfig& c) { return fmt(c.member); }}}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = {
        {"profile", {[](RunConfig& c, const std::string&, const std::string& v) { c.profile = parse_profile(v); },
                     [](const RunConfig& c) { return std::string(profile_name(c.profile)); }}},
        {"seed", {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_size(k, v); },
                  [](const RunConfig& c) { return std::to_string(c.seed); }}},
        {"data_dir", {[](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; },
                      [](const RunConfig& c) { return c.data_dir.string(); }}},
        {"out_dir", {[](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; },
                     [](const RunConfig& c) { return c.out_dir.string(); }}},

        SIZE_FIELD("serial.enc_dim", serial.enc_dim),
        SIZE_FIELD("serial.enc_layers", serial.enc_layers),
        {"serial.tap_layers", {[](RunConfig& c, const std::string& k, const std::string& v) { c.serial.tap_layers = to_size_list(k, v); },
                               [](const RunConfig& c) { return fmt_list(c.serial.tap_layers); }}},
        SIZE_FIELD("serial.conv_downsample", serial.conv_downsample),
        SIZE_FIELD("serial.enc_heads", serial.enc_heads),
        SIZE_FIELD("serial.adaptor_dim", serial.adaptor_dim),
        SIZE_FIELD("serial.adaptor_layers", serial.adaptor_layers),
        SIZE_FIELD("serial.adaptor_downsample", serial.adaptor_downsample),
        SIZE_FIELD("serial.dec_dim", serial.dec_dim),
        SIZE_FIELD("serial.dec_layers", serial.dec_layers),
        SIZE_FIELD("serial.dec_heads", serial.dec_heads),
        SIZE_FIELD("serial.ffn_mult", serial.ffn_mult),
        SIZE_FIELD("serial.max_decode_len", serial.max_decode_len),

        SIZE_FIELD("alsm.d_shared", alsm.d_shared),
        SIZE_FIELD("alsm.n_subspaces", alsm.n_subspaces),
        SIZE_FIELD("alsm.ref_dim", alsm.ref_dim),
        SIZE_FIELD("alsm.classifier_layers", alsm.classifier_layers),
        SIZE_FIELD("alsm.classifier_heads", alsm.classifier_heads),
        SIZE_FIELD("alsm.classifier_ffn_mult", alsm.classifier_ffn_mult),
        REAL_FIELD("alsm.eps_norm", alsm.eps_norm),
        BOOL_FIELD("alsm.positional_encoding", alsm.positional_encoding),

        REAL_FIELD("fusion.a", fusion.a),
        REAL_FIELD("fusion.b", fusion.b),
        REAL_FIELD("fusion.alpha", fusion.alpha),
        REAL_FIELD("fusion.beta", fusion.beta),

        SIZE_FIELD("corpus.n_per_class", corpus.n_per_class),
        SIZE_FIELD("corpus.feat_dim", corpus.feat_dim),
        SIZE_FIELD("corpus.words_per_class", corpus.words_per_class),
        SIZE_FIELD("corpus.min_words", corpus.min_words),
        SIZE_FIELD("corpus.max_words", corpus.max_words),
        SIZE_FIELD("corpus.frames_per_word", corpus.frames_per_word),
        REAL_FIELD("corpus.centroid_scale", corpus.centroid_scale),
        REAL_FIELD("corpus.word_pattern_scale", corpus.word_pattern_scale),
        REAL_FIELD("corpus.spread", corpus.spread),
        REAL_FIELD("corpus.class_word_mass", corpus.class_word_mass),
        REAL_FIELD("corpus.coupling", corpus.coupling),
        REAL_FIELD("corpus.test_fraction", corpus.test_fraction),
        SIZE_FIELD("corpus.n_prompts", corpus.n_prompts),

        REAL_FIELD("optim.lr", optim.lr),
        REAL_FIELD("optim.beta1", optim.beta1),
        REAL_FIELD("optim.beta2", optim.beta2),
        REAL_FIELD("optim.eps", optim.eps),
        REAL_FIELD("optim.weight_decay", optim.weight_decay),

        SIZE_FIELD("train.batch_size", train.batch_size),
        SIZE_FIELD("train.epochs", train.epochs),
        BOOL_FIELD("train.freeze_encoder", train.freeze_encoder),
        BOOL_FIELD("train.detach_alsm_inputs", train.detach_alsm_inputs),

        SIZE_FIELD("filter.count", filter.fixtures.count),
        REAL_FIELD("filter.planted_fraction", filter.fixtures.planted_fraction),
        REAL_FIELD("filter.planted_shift", filter.fixtures.planted_shift),
        REAL_FIELD("filter.planted_jitter", filter.fixtures.planted_jitter),
        REAL_FIELD("filter.seconds", filter.fixtures.seconds),
        REAL_FIELD("filter.annotator_a_accuracy", filter.annotator_a_accuracy),
        REAL_FIELD("filter.annotator_b_accuracy", filter.annotator_b_accuracy),
    };
    return table;
}

#undef SIZE_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD

}  // namespace

Profile parse_profile(const std::string& name) {
    if (name == "desk-dims") return Profile::DeskDims;
    if (name == "paper-dims") return Profile::PaperDims;
    fail(ErrorKind::Usage, "unknown profile '" + name + "' (expected desk-dims or paper-dims)");
}

const char* profile_name(Profile p) { return p == Profile::DeskDims ? "desk-dims" : "paper-dims"; }

RunConfig RunConfig::for_profile(Profile p) {
    RunConfig c;
    c.profile = p;
    if (p == Profile::PaperDims) {
        // emb_a = 3 x 1024 taps, emb_t = 896 decoder width.
        c.serial.enc_dim = 1024;
        c.serial.enc_layers = 24;
        c.serial.tap_layers = {6, 12, 18};
        c.serial.enc_heads = 16;
        c.serial.adaptor_dim = 1024;
        c.serial.dec_dim = 896;
        c.serial.dec_layers = 24;
        c.serial.dec_heads = 14;
        c.alsm.d_shared = 256;
        c.alsm.n_subspaces = 16;
        c.alsm.ref_dim = 128;
        c.alsm.classifier_heads = 4;
        c.optim.lr = 5e-5;
    }
    return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto it = fields().find(key);
    require(it != fields().end(), "unknown config key '" + key + "'", ErrorKind::Usage);
    it->second.set(*this, key, value);
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, origin + ":" + std::to_string(lineno) + ": expected key = value", ErrorKind::Usage);
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot read config " + path.string(), ErrorKind::Usage);
    std::stringstream ss;
    ss << in.rdbuf();
    apply_text(ss.str(), path.string());
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
    return out;
}

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> list = [] {
        std::vector<std::string> k;
        for (const auto& entry : fields()) k.push_back(entry.first);
        return k;
    }();
    return list;
}

void RunConfig::resolve(std::size_t vocab_size) {
    serial.feat_dim = corpus.feat_dim;
    serial.vocab_size = vocab_size;
    alsm.emb_a_dim = serial.emb_a_dim();
    alsm.emb_t_dim = serial.dec_dim;
    corpus.seed = seed;
    filter.fixtures.seed = seed;
    require(train.batch_size >= 1 && train.epochs >= 1, "train.batch_size and train.epochs must be >= 1", ErrorKind::Usage);
    require(optim.lr > 0.0, "optim.lr must be positive", ErrorKind::Usage);
    serial.validate();
    alsm.validate();
    fusion.validate();
    corpus.validate();
}

RunConfig load_run_config(const std::filesystem::path* file, const std::string& profile_override) {
    std::string text;
    if (file) {
        std::ifstream in(*file);
        require(static_cast<bool>(in), "cannot read config " + file->string(), ErrorKind::Usage);
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    Profile profile = Profile::DeskDims;
    if (!profile_override.empty()) {
        profile = parse_profile(profile_override);
    } else {
        RunConfig probe;
        probe.apply_text(text, file ? file->string() : "<none>");
        profile = probe.profile;
    }
    RunConfig c = RunConfig::for_profile(profile);
    c.apply_text(text, file ? file->string() : "<none>");
    c.profile = profile;
    return c;
}

}  // namespace spdp
