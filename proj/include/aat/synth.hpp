#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "aat/errors.hpp"
#include "aat/nn.hpp"
#include "aat/serialize.hpp"
#include "aat/tensor.hpp"

namespace aat {

// Region feature vectors of one "image" plus their mean pool.
struct FeatureSet {
    Tensor vectors; // {k, feature_dim}
    Tensor mean;    // {feature_dim}

    static FeatureSet from_matrix(Tensor m) {
        if (m.ndim() != 2 || m.rows() < 1) {
            throw ConfigError("features: need a {k >= 1, d} matrix, got " + m.shape_str());
        }
        FeatureSet fs;
        fs.mean = Tensor::zeros({m.cols()});
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < m.cols(); ++j) fs.mean.data[static_cast<std::size_t>(j)] += m.at(i, j);
        for (double& v : fs.mean.data) v /= m.rows();
        fs.vectors = std::move(m);
        return fs;
    }

    int k() const { return vectors.rows(); }
    int feature_dim() const { return vectors.cols(); }
};

// ---- feature file format: "AATF1", k u32, d_a u32, k*d_a f64, all LE ----

inline constexpr const char* kFeatureMagic = "AATF1";

inline void save_features(std::ostream& os, const FeatureSet& fs) {
    os.write(kFeatureMagic, 5);
    io::write_u32(os, static_cast<std::uint32_t>(fs.k()));
    io::write_u32(os, static_cast<std::uint32_t>(fs.feature_dim()));
    for (double v : fs.vectors.data) io::write_f64(os, v);
}

inline void save_features(const std::filesystem::path& path, const FeatureSet& fs) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("features: cannot open " + path.string() + " for writing");
    save_features(os, fs);
}

inline FeatureSet load_features(std::istream& is) {
    std::size_t offset = 0;
    io::expect_magic(is, offset, kFeatureMagic, "features");
    std::size_t k_offset = offset;
    std::uint32_t k = io::read_u32(is, offset, "region count");
    std::size_t d_offset = offset;
    std::uint32_t d = io::read_u32(is, offset, "feature dim");
    if (k < 1) throw FormatError("features: k must be >= 1 at offset " + std::to_string(k_offset));
    if (d < 1) {
        throw FormatError("features: feature dim must be >= 1 at offset " + std::to_string(d_offset));
    }
    Tensor m = Tensor::zeros({static_cast<int>(k), static_cast<int>(d)});
    for (double& v : m.data) {
        std::size_t at = offset;
        v = io::read_f64(is, offset, "feature value");
        if (!std::isfinite(v)) {
            throw FormatError("features: non-finite value at offset " + std::to_string(at));
        }
    }
    return FeatureSet::from_matrix(std::move(m));
}

inline FeatureSet load_features(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("features: cannot open " + path.string());
    return load_features(is);
}

// ---- vocabulary ----

struct Vocab {
    // fixed special ids
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;

    static Vocab with_specials(std::vector<std::string> words) {
        Vocab v;
        v.tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
        for (auto& w : words) v.tokens.push_back(std::move(w));
        for (std::size_t i = 0; i < v.tokens.size(); ++i) v.index[v.tokens[i]] = static_cast<int>(i);
        return v;
    }

    int size() const { return static_cast<int>(tokens.size()); }

    int id(const std::string& w) const {
        auto it = index.find(w);
        return it == index.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw LookupError("vocab: id " + std::to_string(id));
        return tokens[static_cast<std::size_t>(id)];
    }

    std::vector<int> encode(const std::vector<std::string>& words) const {
        std::vector<int> out;
        out.reserve(words.size());
        for (const auto& w : words) out.push_back(id(w));
        return out;
    }
};

inline std::vector<std::string> tokenize(const std::string& line) {
    std::istringstream is(line);
    std::vector<std::string> out;
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

inline std::string lowercased(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// Preprocessing: lowercase, trim each caption to max_len words, then keep
// words occurring at least min_count times. Order: frequency desc, then
// lexicographic, after the four specials.
inline Vocab build_vocab(const std::vector<std::string>& captions, int min_count = 5,
                         int max_len = 16) {
    if (captions.empty()) throw ConfigError("build_vocab: empty corpus");
    std::map<std::string, int> counts;
    for (const auto& line : captions) {
        std::vector<std::string> words = tokenize(lowercased(line));
        if (static_cast<int>(words.size()) > max_len) words.resize(static_cast<std::size_t>(max_len));
        for (const auto& w : words) ++counts[w];
    }
    std::vector<std::pair<std::string, int>> kept;
    for (const auto& [w, c] : counts)
        if (c >= min_count) kept.emplace_back(w, c);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> words;
    words.reserve(kept.size());
    for (auto& [w, c] : kept) words.push_back(w);
    return Vocab::with_specials(std::move(words));
}

inline Vocab load_vocab(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("vocab: cannot open " + path.string());
    Vocab v;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) v.tokens.push_back(line);
    }
    if (v.tokens.size() < 4) throw FormatError("vocab: " + path.string() + " lacks special tokens");
    for (std::size_t i = 0; i < v.tokens.size(); ++i) v.index[v.tokens[i]] = static_cast<int>(i);
    return v;
}

inline void save_vocab(const std::filesystem::path& path, const Vocab& v) {
    std::ofstream os(path);
    if (!os) throw FormatError("vocab: cannot open " + path.string() + " for writing");
    for (const auto& t : v.tokens) os << t << "\n";
}

// ---- synthetic captioning task ----
//
// Each region vector carries a slot tag (one-hot over k), a class tag
// (one-hot over n_classes) and noise filler. Captions follow one of a few
// fixed templates mixing function words (no regions needed), object words
// (the class of one slot) and pair/triple words (the class-sum of two or
// three slots, mod n_classes). The template index is the class-sum mod the
// template count, so every caption is a deterministic function of the
// features and the task is solvable exactly.

struct SynthConfig {
    std::uint64_t seed = 1;
    int k = 8;
    int feature_dim = 32;
    int n_classes = 10;
    int max_len = 12;
    double noise_range = 0.25;

    void validate() const {
        if (k < 1) throw ConfigError("synth: k must be >= 1");
        if (n_classes < 2) throw ConfigError("synth: need at least 2 classes");
        if (max_len < 1) throw ConfigError("synth: max_len must be >= 1");
        if (feature_dim < k + n_classes) {
            throw ConfigError("synth: feature_dim " + std::to_string(feature_dim) +
                              " too small for " + std::to_string(k) + " slots + " +
                              std::to_string(n_classes) + " classes");
        }
    }
};

struct SynthInstance {
    FeatureSet features;
    std::vector<int> target;    // token ids, no BOS/EOS
    std::vector<int> alignment; // regions needed per token (analysis only)
};

namespace synth_detail {

struct Slot {
    enum Kind { function_word, object, pair, triple } kind;
    int word;       // index into kFunctionWords for function_word
    int s0, s1, s2; // region slots (taken mod k)
};

inline const std::array<const char*, 6>& function_words() {
    static const std::array<const char*, 6> words = {"the", "a", "with", "near", "and", "on"};
    return words;
}

using Template = std::vector<Slot>;

inline const std::vector<Template>& templates() {
    using S = Slot;
    static const std::vector<Template> t = {
        {{S::function_word, 0, 0, 0, 0}, {S::object, 0, 0, 0, 0}, {S::function_word, 4, 0, 0, 0},
         {S::object, 0, 1, 0, 0}, {S::function_word, 3, 0, 0, 0}, {S::pair, 0, 2, 3, 0}},
        {{S::function_word, 1, 0, 0, 0}, {S::object, 0, 2, 0, 0}, {S::function_word, 2, 0, 0, 0},
         {S::pair, 0, 0, 1, 0}, {S::function_word, 5, 0, 0, 0}, {S::triple, 0, 3, 4, 5}},
        {{S::function_word, 0, 0, 0, 0}, {S::pair, 0, 4, 5, 0}, {S::function_word, 4, 0, 0, 0},
         {S::triple, 0, 0, 1, 2}, {S::object, 0, 6, 0, 0}, {S::function_word, 5, 0, 0, 0},
         {S::object, 0, 7, 0, 0}},
        {{S::object, 0, 3, 0, 0}, {S::function_word, 2, 0, 0, 0}, {S::object, 0, 4, 0, 0},
         {S::function_word, 4, 0, 0, 0}, {S::pair, 0, 6, 7, 0}, {S::function_word, 3, 0, 0, 0},
         {S::triple, 0, 0, 1, 2}}};
    return t;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline int regions_needed(Slot::Kind kind) {
    switch (kind) {
        case Slot::function_word: return 0;
        case Slot::object: return 1;
        case Slot::pair: return 2;
        case Slot::triple: return 3;
    }
    return 0;
}

inline std::string content_word(const SynthConfig& cfg, const Slot& slot,
                                const std::vector<int>& classes) {
    auto cls = [&](int s) { return classes[static_cast<std::size_t>(s % cfg.k)]; };
    switch (slot.kind) {
        case Slot::function_word: return function_words()[static_cast<std::size_t>(slot.word)];
        case Slot::object: return "obj" + std::to_string(cls(slot.s0));
        case Slot::pair:
            return "pair" + std::to_string((cls(slot.s0) + cls(slot.s1)) % cfg.n_classes);
        case Slot::triple:
            return "tri" +
                   std::to_string((cls(slot.s0) + cls(slot.s1) + cls(slot.s2)) % cfg.n_classes);
    }
    throw ContractError("synth: unknown slot kind");
}

} // namespace synth_detail

inline Vocab make_synth_vocab(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<std::string> words;
    for (const char* w : synth_detail::function_words()) words.emplace_back(w);
    for (int c = 0; c < cfg.n_classes; ++c) words.push_back("obj" + std::to_string(c));
    for (int c = 0; c < cfg.n_classes; ++c) words.push_back("pair" + std::to_string(c));
    for (int c = 0; c < cfg.n_classes; ++c) words.push_back("tri" + std::to_string(c));
    return Vocab::with_specials(std::move(words));
}

// Derives the class count backwards from a requested total vocabulary size.
inline int synth_classes_for_vocab(int vocab_size) {
    int fixed = 4 + static_cast<int>(synth_detail::function_words().size());
    int c = (vocab_size - fixed) / 3;
    if (c < 2) {
        throw ConfigError("synth: vocab size " + std::to_string(vocab_size) +
                          " too small to encode regions (need >= " + std::to_string(fixed + 6) +
                          ")");
    }
    return c;
}

// Deterministic per (config.seed, index); instances are independent, so
// generation is safe to parallelize.
inline SynthInstance generate_instance(const SynthConfig& cfg, const Vocab& vocab,
                                       std::uint64_t index) {
    cfg.validate();
    using namespace synth_detail;
    Rng rng(splitmix64(cfg.seed ^ splitmix64(index + 1)));

    std::vector<int> classes(static_cast<std::size_t>(cfg.k));
    for (int& c : classes) c = rng.randint(cfg.n_classes);

    int class_sum = 0;
    for (int c : classes) class_sum += c;
    const Template& tmpl =
        templates()[static_cast<std::size_t>(class_sum) % templates().size()];

    SynthInstance inst;
    for (const Slot& slot : tmpl) {
        if (static_cast<int>(inst.target.size()) >= cfg.max_len) break;
        inst.target.push_back(vocab.id(content_word(cfg, slot, classes)));
        inst.alignment.push_back(regions_needed(slot.kind));
    }

    Tensor m = Tensor::zeros({cfg.k, cfg.feature_dim});
    for (int i = 0; i < cfg.k; ++i) {
        m.at(i, i) = 1.0;
        m.at(i, cfg.k + classes[static_cast<std::size_t>(i)]) = 1.0;
        for (int j = cfg.k + cfg.n_classes; j < cfg.feature_dim; ++j) {
            m.at(i, j) = rng.uniform(-cfg.noise_range, cfg.noise_range);
        }
    }
    inst.features = FeatureSet::from_matrix(std::move(m));
    return inst;
}

// Per-token-class rates implied by the template table at uniform template
// weights, as {0-region, 1-region, multi-region} fractions.
inline std::array<double, 3> synth_class_rates() {
    using namespace synth_detail;
    std::array<double, 3> counts = {0, 0, 0};
    double total = 0;
    for (const Template& t : templates()) {
        for (const Slot& s : t) {
            int r = regions_needed(s.kind);
            counts[static_cast<std::size_t>(r >= 2 ? 2 : r)] += 1;
            total += 1;
        }
    }
    for (double& c : counts) c /= total;
    return counts;
}

// ---- dataset on disk ----
//
// <dir>/vocab.txt, <dir>/meta.json (written by the CLI), and per split
// <dir>/<split>/captions.txt, alignments.txt and features/NNNNN.feat.

struct Dataset {
    Vocab vocab;
    std::vector<SynthInstance> instances;
};

inline std::string feature_file_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05zu.feat", index);
    return buf;
}

inline void save_split(const std::filesystem::path& dir, const Vocab& vocab,
                       const std::vector<SynthInstance>& instances) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "features");
    std::ofstream captions(dir / "captions.txt");
    std::ofstream alignments(dir / "alignments.txt");
    if (!captions || !alignments) {
        throw FormatError("dataset: cannot write to " + dir.string());
    }
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const SynthInstance& inst = instances[i];
        for (std::size_t j = 0; j < inst.target.size(); ++j) {
            captions << (j ? " " : "") << vocab.token(inst.target[j]);
        }
        captions << "\n";
        for (std::size_t j = 0; j < inst.alignment.size(); ++j) {
            alignments << (j ? " " : "") << inst.alignment[j];
        }
        alignments << "\n";
        save_features(dir / "features" / feature_file_name(i), inst.features);
    }
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("dataset: cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    return lines;
}

inline Dataset load_split(const std::filesystem::path& root, const std::string& split) {
    Dataset ds;
    ds.vocab = load_vocab(root / "vocab.txt");
    std::filesystem::path dir = root / split;
    std::vector<std::string> captions = read_lines(dir / "captions.txt");
    std::vector<std::string> alignments = read_lines(dir / "alignments.txt");
    if (alignments.size() != captions.size()) {
        throw FormatError("dataset: " + split + " captions/alignments line counts differ");
    }
    for (std::size_t i = 0; i < captions.size(); ++i) {
        SynthInstance inst;
        inst.features = load_features(dir / "features" / feature_file_name(i));
        inst.target = ds.vocab.encode(tokenize(captions[i]));
        for (const std::string& a : tokenize(alignments[i])) inst.alignment.push_back(std::stoi(a));
        ds.instances.push_back(std::move(inst));
    }
    return ds;
}

} // namespace aat
